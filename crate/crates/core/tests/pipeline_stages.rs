use std::path::Path;

use mbquant::config::{DataConfig, ExperimentConfig, VariantSelection};
use mbquant::eval::EPISODES_HEADER;
use mbquant::pipeline::{Pipeline, Stage};
use mbquant::worldmodel::TrainConfig;
use mbquant::Error;

fn quick_config(out: &Path) -> ExperimentConfig {
    ExperimentConfig {
        data: DataConfig {
            n_traj: 30,
            traj_len: 10,
            seed: 0,
        },
        train: TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        },
        episodes_per_run: 3,
        variants: VariantSelection::List(
            [
                "fp16",
                "uniform_int8",
                "uniform_int4",
                "mixed_int4",
                "layerwise_int4_50",
            ]
            .map(String::from)
            .to_vec(),
        ),
        bootstrap_resamples: 200,
        output_dir: out.to_path_buf(),
        ..ExperimentConfig::default()
    }
}

fn expect_missing(result: mbquant::Result<()>, stage: &str) {
    match result {
        Err(e @ Error::MissingStage { .. }) => {
            let msg = e.to_string();
            assert!(msg.contains(&format!("run `{stage}` first")), "{msg}");
        }
        other => panic!("expected a missing-stage error naming {stage}, got {other:?}"),
    }
}

#[test]
fn stages_name_their_missing_prerequisite() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(quick_config(dir.path()), 2).unwrap();
    expect_missing(p.run(Stage::Train), "gen-data");
    expect_missing(p.run(Stage::Stats), "eval");
    expect_missing(p.run(Stage::Report), "eval");
    p.run(Stage::GenData).unwrap();
    expect_missing(p.run(Stage::Variants), "train");
    p.run(Stage::Train).unwrap();
    expect_missing(p.run(Stage::Eval), "variants");
}

#[test]
fn artifacts_from_another_config_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(quick_config(dir.path()), 2).unwrap();
    p.run(Stage::GenData).unwrap();
    let mut other = quick_config(dir.path());
    other.master_seed = 7;
    let q = Pipeline::new(other, 2).unwrap();
    match q.run(Stage::Train) {
        Err(e @ Error::StaleArtifact { .. }) => assert!(e.to_string().contains("rerun `gen-data`")),
        other => panic!("expected a stale-artifact error, got {other:?}"),
    }
}

#[test]
fn full_run_outputs_agree_with_each_other() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path());
    let p = Pipeline::new(cfg.clone(), 2).unwrap();
    p.run(Stage::All).unwrap();
    let root = dir.path();

    let episodes = std::fs::read_to_string(root.join("episodes.csv")).unwrap();
    let mut lines = episodes.lines();
    assert_eq!(lines.next(), Some(EPISODES_HEADER));
    // 5 variants x (3 + 2 seeds) x 3 episodes.
    assert_eq!(lines.count(), 5 * 5 * 3);

    let table = std::fs::read_to_string(root.join("report/main_table.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 5);

    let stats = p.load_stats().unwrap();
    let stars: usize = stats
        .frontier
        .frontiers
        .iter()
        .map(|f| f.points.iter().filter(|p| p.non_dominated).count())
        .sum();
    let frontier_svg = std::fs::read_to_string(root.join("report/frontier.svg")).unwrap();
    assert_eq!(frontier_svg.matches(r#"class="star""#).count(), stars);

    let forest = std::fs::read_to_string(root.join("report/forest.svg")).unwrap();
    let re = regex::Regex::new(r#"data-ci-low="([-0-9.]+)" data-ci-high="([-0-9.]+)""#).unwrap();
    let whiskers: Vec<(String, String)> = re
        .captures_iter(&forest)
        .map(|c| (c[1].to_string(), c[2].to_string()))
        .collect();
    let expected: Vec<(String, String)> = stats
        .comparisons
        .comparisons
        .iter()
        .map(|c| (format!("{:.3}", c.ci_low), format!("{:.3}", c.ci_high)))
        .collect();
    assert!(!expected.is_empty());
    assert_eq!(whiskers, expected);

    for name in [
        "frontier.svg",
        "forest.svg",
        "retention_curve.svg",
        "difficulty.svg",
        "divergence_scatter.svg",
    ] {
        let text = std::fs::read_to_string(root.join("report").join(name)).unwrap();
        assert!(
            text.contains(p.config_hash()),
            "{name} lacks the config hash"
        );
    }
    for path in p.layout.stats_files() {
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(
            text.contains(p.config_hash()),
            "{} lacks the config hash",
            path.display()
        );
    }

    // Bins are built per budget with the configured granularity.
    for entry in &stats.bins.bins {
        let want = if entry.budget == "bA" { 3 } else { 2 };
        assert_eq!(entry.bins.len(), want);
        assert_eq!(
            entry.bins.iter().map(|b| b.n).sum::<usize>(),
            if entry.budget == "bA" { 9 } else { 6 }
        );
    }
}

#[test]
fn config_file_errors_carry_the_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("config.json");
    std::fs::write(&path, r#"{"train": {"epochs": -1}}"#).unwrap();
    let msg = ExperimentConfig::load(&path).unwrap_err().to_string();
    assert!(msg.contains("train.epochs"), "{msg}");
    assert!(matches!(
        ExperimentConfig::load(&dir.path().join("absent.json")),
        Err(Error::MissingFile(_))
    ));
}
