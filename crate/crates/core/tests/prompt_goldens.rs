use care::prompting::golden::{check_goldens, default_golden_dir, golden_prompts, write_goldens};
use care::prompting::{Adaptation, Engagement};

/// Set `CARE_UPDATE_GOLDEN=1` to rewrite the committed files after an intended change.
#[test]
fn prompts_match_committed_goldens() {
    let dir = default_golden_dir();
    if std::env::var_os("CARE_UPDATE_GOLDEN").is_some() {
        write_goldens(&dir).unwrap();
    }
    let stale = check_goldens(&dir);
    assert!(stale.is_empty(), "golden mismatch: {stale:?}");
    assert_eq!(golden_prompts().len(), Adaptation::ALL.len() * Engagement::ALL.len());
}

#[test]
fn corrupted_golden_is_detected() {
    let tmp = tempfile::tempdir().unwrap();
    write_goldens(tmp.path()).unwrap();
    assert!(check_goldens(tmp.path()).is_empty());
    let victim = tmp.path().join("direct__rerank.txt");
    let mut bytes = std::fs::read(&victim).unwrap();
    bytes[10] ^= 1;
    std::fs::write(&victim, bytes).unwrap();
    assert_eq!(check_goldens(tmp.path()), vec!["direct__rerank.txt".to_string()]);
}
