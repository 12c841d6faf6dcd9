use std::path::{Path, PathBuf};

use stereo_costvol::io::{read_kitti_disp_png, read_pfm, save_gray, write_kitti_disp_png, write_pfm, GrayImage};
use stereo_costvol::metrics::EvalMask;
use stereo_costvol::volume::DisparityMap;
use stereo_costvol_cli::selftest::{report, run_checks, SelftestOptions};
use stereo_costvol_cli::{main_with_args, EXIT_FAILURE, EXIT_OK, EXIT_USAGE};
use tempfile::TempDir;

struct Run {
    code: i32,
    out: String,
    err: String,
}

fn cli(args: &[&str]) -> Run {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let full: Vec<&str> = std::iter::once("stereo-costvol").chain(args.iter().copied()).collect();
    let code = main_with_args(full, &mut out, &mut err);
    Run { code, out: String::from_utf8(out).unwrap(), err: String::from_utf8(err).unwrap() }
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Writes a 128x64 pair at disparity 4 and returns the directory.
fn pair(ext: &str) -> TempDir {
    let dir = TempDir::new().unwrap();
    let r = cli(&["gen-stereogram", "--out-dir", p(dir.path()), "--width", "128", "--height", "64", "--disparity", "4", "--ext", ext]);
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
    dir
}

fn write_map(dir: &Path, name: &str, h: usize, w: usize, v: &[f32]) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, write_pfm(&DisparityMap::new(h, w, v.to_vec()).unwrap())).unwrap();
    path
}

fn field(out: &str, key: &str) -> String {
    out.lines().find_map(|l| l.strip_prefix(&format!("{key}: "))).unwrap_or_else(|| panic!("{key} missing in {out}")).to_string()
}

#[test]
fn match_fast_writes_parseable_pfm() {
    let dir = pair("pgm");
    let out = dir.path().join("out.pfm");
    let r = cli(&[
        "match",
        p(&dir.path().join("left.pgm")),
        p(&dir.path().join("right.pgm")),
        "--mode",
        "fast_acv",
        "--dmax",
        "64",
        "-o",
        p(&out),
    ]);
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
    let map = read_pfm(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!((map.height(), map.width()), (64, 128));
    assert_eq!(field(&r.out, "mode"), "fast_acv");
    assert_eq!(field(&r.out, "k"), "16");
    assert!(r.out.contains("volume compact:"));
}

#[test]
fn match_acv_kitti_output_and_json_report() {
    let dir = pair("png");
    let out = dir.path().join("d.png");
    let r = cli(&[
        "match",
        p(&dir.path().join("left.png")),
        p(&dir.path().join("right.png")),
        "--mode",
        "acv",
        "--dmax",
        "32",
        "--format",
        "kitti",
        "-o",
        p(&out),
        "--json",
    ]);
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
    let (map, mask) = read_kitti_disp_png(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(mask.count(), 64 * 128);
    assert!((map.median() - 4.0).abs() < 0.5);
    let v: serde_json::Value = serde_json::from_str(&r.out).unwrap();
    assert_eq!(v["config"]["mode"], "acv");
    assert_eq!(v["volume_elements"]["c_patch"], 40 * 8 * 16 * 32);
    for stage in ["features_ms", "construction_ms", "aggregation_ms", "prediction_ms"] {
        assert!(v["timings"][stage].as_f64().unwrap() >= 0.0);
    }
}

#[test]
fn match_size_mismatch_is_usage_error() {
    let dir = pair("pgm");
    let small = dir.path().join("small.pgm");
    save_gray(&GrayImage::new(32, 64, vec![0.5; 32 * 64]).unwrap(), &small).unwrap();
    let r = cli(&["match", p(&dir.path().join("left.pgm")), p(&small), "-o", p(&dir.path().join("x.pfm"))]);
    assert_eq!(r.code, EXIT_USAGE);
    assert!(r.err.contains("image size mismatch"), "{}", r.err);
}

#[test]
fn match_rejects_indivisible_range_and_missing_files() {
    let dir = pair("pgm");
    let (l, rt) = (dir.path().join("left.pgm"), dir.path().join("right.pgm"));
    let r = cli(&["match", p(&l), p(&rt), "--mode", "acv", "--dmax", "63"]);
    assert_eq!(r.code, EXIT_USAGE);
    let r = cli(&["match", p(&dir.path().join("nope.pgm")), p(&rt)]);
    assert_eq!(r.code, EXIT_USAGE);
    assert!(r.err.contains("nope.pgm"));
    let r = cli(&["match", p(&l), p(&rt), "--mode", "sgm"]);
    assert_eq!(r.code, EXIT_USAGE);
}

#[test]
fn config_file_values_are_overridden_by_flags() {
    let dir = pair("pgm");
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# defaults\nmode = fast_acv\ndmax = 32\nk = 4\nregularizer = identity\nlogit_scale = 8\n").unwrap();
    let args = |extra: &[&str]| {
        let mut a = vec![
            "match".to_string(),
            p(&dir.path().join("left.pgm")).to_string(),
            p(&dir.path().join("right.pgm")).to_string(),
            "--config".to_string(),
            p(&cfg).to_string(),
            "-o".to_string(),
            p(&dir.path().join("o.pfm")).to_string(),
        ];
        a.extend(extra.iter().map(|s| s.to_string()));
        a
    };
    let run = |extra: &[&str]| {
        let a = args(extra);
        cli(&a.iter().map(String::as_str).collect::<Vec<_>>())
    };
    let r = run(&[]);
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
    assert_eq!(field(&r.out, "k"), "4");
    assert_eq!(field(&r.out, "dmax"), "32");
    assert!(field(&r.out, "regularizer").starts_with("identity"));
    assert_eq!(field(&r.out, "logit scale"), "8");
    let r = run(&["--k", "8", "--regularizer", "box3d", "--box-radius", "2"]);
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
    assert_eq!(field(&r.out, "k"), "8");
    assert_eq!(field(&r.out, "regularizer"), "box3d (box radius 2)");

    std::fs::write(&cfg, "mode = fast_acv\nwindow = 3\n").unwrap();
    let r = run(&[]);
    assert_eq!(r.code, EXIT_USAGE);
    assert!(r.err.contains("unknown config key 'window'"));
}

#[test]
fn vap_flags_accept_negative_values() {
    let dir = pair("pgm");
    let r = cli(&[
        "match",
        p(&dir.path().join("left.pgm")),
        p(&dir.path().join("right.pgm")),
        "--mode",
        "fast_acv",
        "--dmax",
        "32",
        "--alpha",
        "-0.5",
        "--beta",
        "-2",
        "--radius",
        "2",
        "-o",
        p(&dir.path().join("o.pfm")),
    ]);
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
    assert_eq!(field(&r.out, "vap"), "alpha -0.5 beta -2 radius 2");
}

#[test]
fn threads_flag_then_environment() {
    use stereo_costvol_cli::{resolve_threads, THREADS_ENV};
    std::env::set_var(THREADS_ENV, "3");
    assert_eq!(resolve_threads(None, None).unwrap(), Some(3));
    assert_eq!(resolve_threads(None, Some(2)).unwrap(), Some(2));
    assert_eq!(resolve_threads(Some(5), Some(2)).unwrap(), Some(5));
    std::env::set_var(THREADS_ENV, "many");
    assert!(resolve_threads(None, None).is_err());
    std::env::remove_var(THREADS_ENV);
    assert_eq!(resolve_threads(None, None).unwrap(), None);
}

#[test]
fn eval_perfect_prediction_is_all_zero() {
    let dir = TempDir::new().unwrap();
    let gt = write_map(dir.path(), "gt.pfm", 2, 2, &[1.0, 2.0, 3.0, 4.0]);
    let r = cli(&["eval", p(&gt), p(&gt)]);
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
    for key in ["EPE", "D1", "bad-1", "bad-2", "bad-3"] {
        assert_eq!(field(&r.out, key), "0.00");
    }
}

#[test]
fn eval_kitti_zeros_are_excluded() {
    let dir = TempDir::new().unwrap();
    let gt_map = DisparityMap::new(1, 4, vec![10.0, 0.0, 20.0, 0.0]).unwrap();
    let mask = EvalMask::new(1, 4, vec![true, false, true, false]).unwrap();
    let gt = dir.path().join("gt.png");
    std::fs::write(&gt, write_kitti_disp_png(&gt_map, &mask).unwrap()).unwrap();
    let pred = write_map(dir.path(), "pred.pfm", 1, 4, &[11.0, 90.0, 20.0, 90.0]);
    let r = cli(&["eval", p(&pred), p(&gt), "--json"]);
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
    let v: serde_json::Value = serde_json::from_str(&r.out).unwrap();
    assert_eq!(v["epe"], 0.5);
    assert_eq!(v["bad_1"], 0.0);
    assert_eq!(v["valid_pixels"], 2);
}

#[test]
fn eval_external_mask_and_shape_mismatch() {
    let dir = TempDir::new().unwrap();
    let gt = write_map(dir.path(), "gt.pfm", 1, 4, &[5.0, 5.0, 5.0, f32::INFINITY]);
    let pred = write_map(dir.path(), "pred.pfm", 1, 4, &[5.0, 9.0, 5.0, 1.0]);
    let m = dir.path().join("mask.pgm");
    save_gray(&GrayImage::new(1, 4, vec![1.0, 0.0, 1.0, 1.0]).unwrap(), &m).unwrap();
    let r = cli(&["eval", p(&pred), p(&gt), "--mask", p(&m)]);
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
    assert_eq!(field(&r.out, "EPE"), "0.00");
    assert_eq!(field(&r.out, "valid pixels"), "2");
    let other = write_map(dir.path(), "other.pfm", 2, 2, &[0.0; 4]);
    let r = cli(&["eval", p(&other), p(&gt)]);
    assert_eq!(r.code, EXIT_USAGE);
    assert!(r.err.contains("shape mismatch"));
}

#[test]
fn bench_k_sweep_is_linear_and_counts_are_run_independent() {
    let sweep = |runs: &str| {
        let r = cli(&[
            "bench", "--size", "128x64", "--dmax", "192", "--k", "16,24,32,48", "--runs", runs, "--warmup", "0", "--json",
        ]);
        assert_eq!(r.code, EXIT_OK, "{}", r.err);
        serde_json::from_str::<serde_json::Value>(&r.out).unwrap()
    };
    let one = sweep("1");
    let rows = one["rows"].as_array().unwrap();
    let compact: Vec<u64> = rows
        .iter()
        .filter(|r| r["mode"] == "fast_acv")
        .map(|r| r["volume_elements"]["compact"].as_u64().unwrap())
        .collect();
    assert_eq!(compact.len(), 4);
    for (c, k) in compact.iter().zip([16u64, 24, 32, 48]) {
        assert_eq!(*c, compact[0] / 16 * k);
    }
    let three = sweep("3");
    let counts = |v: &serde_json::Value| {
        v["rows"].as_array().unwrap().iter().map(|r| (r["volume_elements"].clone(), r["peak_volume_elements"].clone())).collect::<Vec<_>>()
    };
    assert_eq!(counts(&one), counts(&three));
    assert_eq!(one["counts"], three["counts"]);
    assert_eq!(one["ratios"].as_array().unwrap().len(), 8);
}

#[test]
fn bench_text_report_and_bad_size() {
    let r = cli(&["bench", "--size", "64x32", "--dmax", "32", "--k", "4", "--runs", "1"]);
    assert_eq!(r.code, EXIT_OK, "{}", r.err);
    assert!(r.out.contains("bitwise-equal"));
    assert!(!r.out.contains("MISMATCH"));
    assert_eq!(cli(&["bench", "--size", "64by32"]).code, EXIT_USAGE);
    assert_eq!(cli(&["bench", "--size", "60x32", "--dmax", "32", "--runs", "1"]).code, EXIT_USAGE);
}

#[test]
fn selftest_passes_and_covers_enough_operations() {
    let r = cli(&["selftest", "--instances", "5"]);
    assert_eq!(r.code, EXIT_OK, "{}", r.out);
    let n: usize = field(&r.out, "operations tested").parse().unwrap();
    assert!(n >= 25);
}

fn wrong_breakpoint(pred: &DisparityMap, gt: &DisparityMap, mask: &EvalMask) -> stereo_costvol::Result<f64> {
    let mut total = 0.0;
    let mut n = 0;
    for y in 0..gt.height() {
        for x in 0..gt.width() {
            if mask.is_valid(y, x) {
                let e = (pred.get(y, x) - gt.get(y, x)).abs() as f64;
                total += if e < 2.0 { 0.25 * e * e } else { e - 1.0 };
                n += 1;
            }
        }
    }
    Ok(total / n as f64)
}

#[test]
fn selftest_names_a_corrupted_smooth_l1() {
    let opts = SelftestOptions { smooth_l1: wrong_breakpoint, ..SelftestOptions::new(0, 10) };
    let summary = run_checks(&opts);
    assert_eq!(summary.first_failing().unwrap().op, "smooth_l1");
    let mut out = Vec::new();
    assert_eq!(report(&summary, false, &mut out).unwrap(), EXIT_FAILURE);
    let text = String::from_utf8(out).unwrap();
    assert!(text.lines().last().unwrap().starts_with("selftest failed: smooth_l1"), "{text}");
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(cli(&[]).code, EXIT_USAGE);
    assert_eq!(cli(&["match"]).code, EXIT_USAGE);
    assert_eq!(cli(&["selftest", "--bogus"]).code, EXIT_USAGE);
    assert_eq!(cli(&["--help"]).code, EXIT_OK);
}
