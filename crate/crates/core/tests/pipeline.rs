use std::path::PathBuf;

use folrom::pipeline::{CacheStatus, Pipeline, PipelineConfig, Stage};

fn small(dir: &str) -> PipelineConfig {
    let mut cfg = PipelineConfig::builtin("shawpierre").unwrap();
    let out = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("pipeline").join(dir);
    let _ = std::fs::remove_dir_all(&out);
    cfg.output_dir = out;
    cfg.data.trajectories = 80;
    cfg.data.points = 25;
    cfg.foliation.order = 3;
    cfg.foliation.sweeps = 2;
    cfg.backbone.samples = 20;
    cfg
}

fn statuses(p: &Pipeline) -> Vec<(Stage, CacheStatus)> {
    p.reports.iter().map(|r| (r.stage, r.status.clone())).collect()
}

fn read(p: &Pipeline, file: &str) -> Vec<u8> {
    std::fs::read(p.path(file)).unwrap()
}

#[test]
fn second_run_is_served_from_cache() {
    let cfg = small("rerun");
    let mut first = Pipeline::new(cfg.clone()).unwrap();
    first.run_until(Stage::Backbone).unwrap();
    assert!(statuses(&first).iter().all(|(_, s)| *s == CacheStatus::Computed));
    let files: Vec<_> = Stage::ALL.iter().flat_map(|s| s.files()).map(|f| read(&first, f)).collect();

    let mut second = Pipeline::new(cfg).unwrap();
    second.run_until(Stage::Backbone).unwrap();
    assert_eq!(statuses(&second).len(), Stage::ALL.len());
    assert!(statuses(&second).iter().all(|(_, s)| *s == CacheStatus::Hit));
    let again: Vec<_> = Stage::ALL.iter().flat_map(|s| s.files()).map(|f| read(&second, f)).collect();
    assert_eq!(files, again);
    assert_eq!(first.products.backbone, second.products.backbone);
}

#[test]
fn separate_runs_are_bit_identical() {
    let mut a = Pipeline::new(small("det-a")).unwrap();
    a.run_until(Stage::Backbone).unwrap();
    let mut b = Pipeline::new(small("det-b")).unwrap();
    b.run_until(Stage::Backbone).unwrap();
    for stage in Stage::ALL {
        for f in stage.files() {
            assert_eq!(read(&a, f), read(&b, f), "{f}");
        }
    }
}

#[test]
fn edits_invalidate_only_what_depends_on_them() {
    let cfg = small("edits");
    let mut p = Pipeline::new(cfg.clone()).unwrap();
    p.run_until(Stage::Backbone).unwrap();

    let mut changed = cfg.clone();
    changed.backbone.samples = 12;
    let mut p = Pipeline::new(changed).unwrap();
    p.run_until(Stage::Backbone).unwrap();
    for (stage, status) in statuses(&p) {
        let want = if stage == Stage::Backbone { CacheStatus::Computed } else { CacheStatus::Hit };
        assert_eq!(status, want, "{}", stage.name());
    }
    assert_eq!(p.products.backbone.as_ref().unwrap().r.len(), 12);

    std::fs::write(p.path("foliation.txt"), "tampered").unwrap();
    let mut p = Pipeline::new(cfg).unwrap();
    p.run_until(Stage::Foliation).unwrap();
    let s = statuses(&p);
    assert_eq!(s[3], (Stage::Foliation, CacheStatus::Computed));
    assert!(s[..3].iter().all(|(_, st)| *st == CacheStatus::Hit));
}

#[test]
fn bad_configurations_fail_before_any_work() {
    let mut cfg = small("invalid");
    cfg.bundles.modes = vec![5];
    let err = Pipeline::new(cfg.clone()).err().unwrap();
    assert!(err.is_validation(), "{err}");
    assert!(!cfg.output_dir.exists());

    cfg.bundles.modes = vec![1];
    cfg.system.dataset = Some(cfg.output_dir.join("missing.csv"));
    assert!(Pipeline::new(cfg).err().unwrap().is_validation());

    assert!(PipelineConfig::from_toml("[data]\nunknown = 1\n").is_err());
    assert!(PipelineConfig::builtin("nonexistent").is_err());
}

#[test]
fn external_dataset_matches_simulation() {
    let mut sim = Pipeline::new(small("sim")).unwrap();
    sim.run_until(Stage::Bundles).unwrap();
    let mut cfg = small("ext");
    std::fs::create_dir_all(&cfg.output_dir).unwrap();
    let copy = cfg.output_dir.join("input.csv");
    std::fs::copy(sim.path("dataset.csv"), &copy).unwrap();
    cfg.system.dataset = Some(copy);
    let mut ext = Pipeline::new(cfg).unwrap();
    ext.run_until(Stage::Bundles).unwrap();
    assert_eq!(read(&sim, "bundles.txt"), read(&ext, "bundles.txt"));
}
