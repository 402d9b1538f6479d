use std::path::Path;

use mnistgen_core::curation::modes::{DecisionSource, Mode};
use mnistgen_core::export::{file_names, read_idx, MANIFEST_FILE};
use mnistgen_core::fixtures::{write_image_folders, FolderSpec};
use mnistgen_core::hierarchy::template;
use mnistgen_core::review::{HumanDecision, Verdict};
use mnistgen_core::workflow::{Run, RunConfig, DATASET_DIR};
use mnistgen_core::Error;

fn setup(dir: &Path, mode: Mode, unattended: bool) -> Run {
    let h = template("tree").unwrap();
    std::fs::write(dir.join("hierarchy.json"), h.to_json()).unwrap();
    let spec = FolderSpec {
        per_subcategory: 6,
        clutter_every: 5,
        seed: 3,
    };
    write_image_folders(&dir.join("images"), &h, spec).unwrap();
    let mut c = RunConfig::starter("hierarchy.json", &h);
    c.curation.mode = mode;
    c.curation.unattended = unattended;
    Run::new(c, dir).unwrap()
}

fn through_curate(run: &Run) {
    run.fetch().unwrap();
    let provider = run.provider().unwrap();
    run.analyze(provider.as_ref()).unwrap();
    run.curate().unwrap();
}

#[test]
fn unattended_smart_run_decides_everything_and_exports_the_kept_set() {
    let tmp = tempfile::tempdir().unwrap();
    let run = setup(tmp.path(), Mode::Smart, true);
    let f = run.fetch().unwrap();
    assert_eq!((f.fetched, f.added, f.pool_size), (72, 72, 72));
    assert_eq!(run.fetch().unwrap().added, 0);

    let provider = run.provider().unwrap();
    let a = run.analyze(provider.as_ref()).unwrap();
    assert_eq!((a.analyzed, a.skipped), (72, 0));

    let c = run.curate().unwrap();
    let t = c.tallies;
    assert_eq!(t.auto + t.review + t.remove, 72);
    assert_eq!((c.decisions, c.queue_entries), (72, 0));
    assert_eq!(c.class_counts.iter().sum::<u64>() as usize, c.kept);

    let e = run.export().unwrap();
    assert_eq!((e.count, e.unresolved), (c.kept, 0));
    assert_eq!((e.width, e.height), (28, 28));
    let art = read_idx(run.out_file(DATASET_DIR)).unwrap();
    assert_eq!(art.manifest.count, c.kept);
    assert_eq!(art.manifest.config_hash, run.config_hash());
    assert_eq!(art.manifest.created_at, run.timestamp().unwrap());
    assert!(art.images.iter().all(|&p| p == 0 || p == 255));
    let mut counts = vec![0u64; 4];
    art.main_labels
        .iter()
        .for_each(|&l| counts[l as usize] += 1);
    assert_eq!(counts, c.class_counts);
}

#[test]
fn attended_smart_run_waits_for_reviewers() {
    let tmp = tempfile::tempdir().unwrap();
    let run = setup(tmp.path(), Mode::Smart, false);
    through_curate(&run);
    let queue = run.queue().unwrap();
    assert_eq!(queue.len(), 72);
    assert!(matches!(run.export(), Err(Error::Dataset(_))));

    let mut state = run.review_state().unwrap();
    for (i, q) in queue.iter().take(10).enumerate() {
        let verdict = if i % 2 == 0 {
            Verdict::Accept
        } else {
            Verdict::Discard
        };
        let d = HumanDecision {
            image_id: Some(q.id.clone()),
            cluster_id: None,
            verdict,
            main: None,
            sub: None,
            note: None,
            timestamp: None,
        };
        state.submit(&d).unwrap();
    }
    let e = run.export().unwrap();
    assert_eq!((e.count, e.unresolved), (5, 62));
    assert!(matches!(run.curate(), Err(Error::Precondition(_))));

    let reopened = run.review_state().unwrap();
    assert_eq!(reopened.pending(), 62);
    let human = reopened
        .records()
        .iter()
        .filter(|r| r.source == DecisionSource::Human)
        .count();
    assert_eq!(human, 10);
}

#[test]
fn attended_fast_run_queues_one_entry_per_cluster() {
    let tmp = tempfile::tempdir().unwrap();
    let run = setup(tmp.path(), Mode::Fast, false);
    through_curate(&run);
    let queue = run.queue().unwrap();
    let members: usize = queue.iter().map(|q| q.members.len()).sum();
    assert_eq!(members, 72);
    assert!(queue.len() < 72);
    assert!(queue.iter().all(|q| q.cluster_id.is_some()));
}

#[test]
fn runs_in_separate_directories_produce_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    let mut run = setup(tmp.path(), Mode::Smart, true);
    let mut outputs = Vec::new();
    for out in ["a", "b"] {
        run.config.output_dir = out.into();
        through_curate(&run);
        run.export().unwrap();
        outputs.push(run.out_file(DATASET_DIR));
    }
    let mut names: Vec<String> = ["train", "test"]
        .iter()
        .flat_map(|s| file_names(s))
        .collect();
    names.push(MANIFEST_FILE.into());
    for name in names {
        let a = std::fs::read(outputs[0].join(&name)).unwrap();
        let b = std::fs::read(outputs[1].join(&name)).unwrap();
        assert!(a == b, "{name} differs");
    }
}

#[test]
fn config_hash_ignores_output_dir_only() {
    let c = RunConfig::default();
    let mut moved = c.clone();
    moved.output_dir = "elsewhere".into();
    assert_eq!(c.hash(), moved.hash());
    let mut reseeded = c.clone();
    reseeded.seed = 1;
    assert_ne!(c.hash(), reseeded.hash());
}

#[test]
fn config_rejects_unknown_keys_and_bad_values() {
    assert!(matches!(
        RunConfig::parse(r#"{"sede": 1}"#),
        Err(Error::Syntax { .. })
    ));
    assert!(matches!(
        RunConfig::parse(r#"{"split_ratio": 1.0}"#),
        Err(Error::Config(_))
    ));
    let c = RunConfig::parse(r#"{"seed": 9, "curation": {"mode": "fast"}}"#).unwrap();
    assert_eq!((c.seed, c.curation.mode), (9, Mode::Fast));
}

#[test]
fn curate_before_analyze_is_a_precondition_error() {
    let tmp = tempfile::tempdir().unwrap();
    let run = setup(tmp.path(), Mode::Smart, true);
    run.fetch().unwrap();
    assert!(matches!(run.curate(), Err(Error::Precondition(_))));
}
