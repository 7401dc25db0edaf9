use std::path::Path;

use samcnn::config::{load_toml, parse_toml};
use samcnn::experiments::{
    aggregate, export_heatmap, render_pgm, run_grid, GridOptions, GridSpec, HeatmapRow, CELL_PIXELS,
};

const SPEC: &str = r#"
n_test = 300
seeds = [0, 1, 2]
d_values = [100, 400]
mu_values = [0.5, 3.0, 8.0]
checks = true
[data]
n = 8
sigma_p = 1.0
p = 0.1
[net]
m = 3
init = "uniform_fan_in"
[[variant]]
name = "sgd"
algo = "sgd"
eta = 0.05
batch_size = 4
epochs = 8
[[variant]]
name = "sam"
algo = "sam"
eta = 0.05
batch_size = 4
epochs = 8
tau = 0.1
"#;

fn spec() -> GridSpec {
    parse_toml(SPEC).unwrap()
}

fn opts(dir: &Path, resume: bool) -> GridOptions {
    GridOptions { out_dir: Some(dir.to_path_buf()), resume, jobs: 2 }
}

#[test]
fn cell_means_are_recomputable_from_the_long_csv() {
    let dir = tempfile::tempdir().unwrap();
    let s = spec();
    let results = run_grid(&s, &opts(dir.path(), false)).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), results.len());
    for cell in aggregate(&s, &results) {
        let errs: Vec<f64> = rows
            .iter()
            .filter(|r| {
                r[col("d")] == cell.d.to_string()
                    && r[col("mu_norm")].parse::<f64>().unwrap() == cell.mu_norm
                    && r[col("variant")] == cell.algo
            })
            .map(|r| r[col("test_error")].parse().unwrap())
            .collect();
        assert_eq!(errs.len(), cell.n_seeds);
        let mean = errs.iter().sum::<f64>() / errs.len() as f64;
        assert!((mean - cell.mean_test_error).abs() <= 1e-15);
    }
    for v in ["sgd", "sam"] {
        assert!(dir.path().join(format!("heatmap_{v}.csv")).exists());
        assert!(dir.path().join(format!("heatmap_{v}.pgm")).exists());
    }
    assert_eq!(std::fs::read_dir(dir.path().join("checks")).unwrap().count(), results.len());
}

#[test]
fn resume_reproduces_the_uninterrupted_table() {
    let s = spec();
    let full = tempfile::tempdir().unwrap();
    run_grid(&s, &opts(full.path(), false)).unwrap();
    let want = std::fs::read(full.path().join("results.csv")).unwrap();

    let part = tempfile::tempdir().unwrap();
    run_grid(&s, &opts(part.path(), false)).unwrap();
    // Simulate an interrupted run: drop some trials, corrupt one, lose the table.
    let mut trials: Vec<_> = std::fs::read_dir(part.path().join("trials")).unwrap().map(|e| e.unwrap().path()).collect();
    trials.sort();
    for p in trials.iter().step_by(3) {
        std::fs::remove_file(p).unwrap();
    }
    std::fs::write(&trials[1], b"{\"cell\":").unwrap();
    std::fs::remove_file(part.path().join("results.csv")).unwrap();
    run_grid(&s, &opts(part.path(), true)).unwrap();
    assert_eq!(std::fs::read(part.path().join("results.csv")).unwrap(), want);
}

#[test]
fn adding_seeds_and_axis_values_leaves_existing_trials_unchanged() {
    let small = spec();
    let mut big = spec();
    big.seeds.push(7);
    big.mu_values.insert(0, 12.0);
    let a = run_grid(&small, &GridOptions::default()).unwrap();
    let b = run_grid(&big, &GridOptions::default()).unwrap();
    for r in &a {
        let twin = b.iter().find(|x| x.cell == r.cell).unwrap();
        assert_eq!(twin.test_error, r.test_error);
        assert_eq!(twin.final_train_loss, r.final_train_loss);
    }
}

#[test]
fn learning_rate_ablation_is_expressible_as_a_grid() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/minibatch_lr.toml");
    let s: GridSpec = load_toml(&path).unwrap();
    s.validate().unwrap();
    let etas: Vec<f64> = s.variants.iter().map(|v| v.eta).collect();
    for eta in [0.001, 0.01, 0.1, 1.0] {
        assert!(etas.contains(&eta));
    }
    assert!(s.variants.iter().all(|v| v.batch_size == 10));
    for name in ["synthetic_grid.toml", "smoke_grid.toml"] {
        let g: GridSpec = load_toml(&Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)).unwrap();
        g.validate().unwrap();
    }
}

fn row(d: usize, mu: f64, e: f64) -> HeatmapRow {
    HeatmapRow { d, mu_norm: mu, algo: "sgd".into(), mean_test_error: e, stderr: 0.0, n_seeds: 1 }
}

fn pixels(pgm: &str) -> Vec<Vec<u32>> {
    pgm.lines().skip(3).map(|l| l.split(' ').map(|v| v.parse().unwrap()).collect()).collect()
}

#[test]
fn heatmap_renders_constant_and_monotone_tables() {
    let ds = [10, 20, 30];
    let mus = [1.0, 2.0];
    let constant: Vec<HeatmapRow> = ds.iter().flat_map(|&d| mus.iter().map(move |&m| row(d, m, 0.3))).collect();
    let px = pixels(&render_pgm(&constant, "sgd", &ds, &mus));
    assert_eq!(px.len(), ds.len() * CELL_PIXELS);
    let first = px[0][0];
    assert!(px.iter().flatten().all(|&v| v == first));

    // Error falls with mu and rises with d.
    let mono: Vec<HeatmapRow> = ds
        .iter()
        .enumerate()
        .flat_map(|(i, &d)| mus.iter().enumerate().map(move |(j, &m)| row(d, m, 0.1 * i as f64 + 0.2 - 0.1 * j as f64)))
        .collect();
    let px = pixels(&render_pgm(&mono, "sgd", &ds, &mus));
    for line in &px {
        assert!(line.windows(2).all(|w| w[0] <= w[1]), "brighter with larger mu");
    }
    // Top of the image is the largest d, i.e. the darkest row.
    for c in 0..px[0].len() {
        assert!(px.windows(2).all(|w| w[0][c] <= w[1][c]));
    }
}

#[test]
fn empty_table_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let files = export_heatmap(&[], &["sam".to_string()], &[10], &[1.0], dir.path()).unwrap();
    assert_eq!(files, vec![dir.path().join("heatmap_sam.csv")]);
    assert_eq!(
        std::fs::read_to_string(&files[0]).unwrap(),
        "d,mu_norm,algo,mean_test_error,stderr,n_seeds\n"
    );
    assert!(!dir.path().join("heatmap_sam.pgm").exists());
}
