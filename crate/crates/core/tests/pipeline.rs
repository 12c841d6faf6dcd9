use stereo_costvol::acv::{build_mapm_volume, generate_attention_weights, regress_attention_disparity, MapmLevel};
use stereo_costvol::io::{generate_stereogram, GrayImage, Stereogram, StereogramSpec};
use stereo_costvol::metrics::{epe, EvalMask};
use stereo_costvol::par::with_threads;
use stereo_costvol::pipeline::*;

const H: usize = 128;
const W: usize = 256;
const D: usize = 32;

fn scene(disparity: u32, seed: u64) -> Stereogram {
    generate_stereogram(&StereogramSpec::constant(H, W, disparity, seed)).unwrap()
}

fn interior(s: &Stereogram) -> EvalMask {
    s.mask.and(&EvalMask::interior(H, W, D)).unwrap()
}

fn cfg(mode: PipelineMode, k: Option<usize>) -> PipelineConfig {
    PipelineConfig { k, ..PipelineConfig::new(mode, D) }
}

#[test]
fn stereogram_recovery() {
    let s = scene(8, 11);
    let mask = interior(&s);
    let acv = run_acv_pipeline(&s.left, &s.right, &cfg(PipelineMode::Acv, None)).unwrap();
    assert!(epe(&acv, &s.gt, &mask).unwrap() < 0.5);
    for k in [8, 4] {
        let fast = run_fast_acv_pipeline(&s.left, &s.right, &cfg(PipelineMode::FastAcv, Some(k))).unwrap();
        assert!(epe(&fast, &s.gt, &mask).unwrap() < 0.7, "k = {k}");
    }
}

#[test]
fn identical_views_give_zero_disparity() {
    let s = scene(8, 12);
    for mode in [PipelineMode::Acv, PipelineMode::FastAcv] {
        let out = run_pipeline(&s.left, &s.left, &cfg(mode, None)).unwrap();
        assert!(out.disparity.median() < 1.0, "{mode:?}");
    }
}

#[test]
fn swapped_views_collapse_toward_zero() {
    // the true match lies at negative disparity, outside the search range
    let s = scene(8, 7);
    let out = run_acv_pipeline(&s.right, &s.left, &cfg(PipelineMode::Acv, None)).unwrap();
    assert!(out.median() < 1.0, "median {}", out.median());
}

#[test]
fn shift_equivariance() {
    for mode in [PipelineMode::Acv, PipelineMode::FastAcv] {
        let a = run_pipeline(&scene(8, 3).left, &scene(8, 3).right, &cfg(mode, None)).unwrap();
        let s12 = scene(12, 3);
        let b = run_pipeline(&s12.left, &s12.right, &cfg(mode, None)).unwrap();
        let shift = b.disparity.median() - a.disparity.median();
        assert!((shift - 4.0).abs() <= 0.5, "{mode:?}: shift {shift}");
    }
}

#[test]
fn outputs_within_search_range_and_deterministic_across_threads() {
    let s = scene(5, 21);
    for mode in [PipelineMode::Acv, PipelineMode::FastAcv] {
        let c = cfg(mode, None);
        let one = with_threads(Some(1), || run_pipeline(&s.left, &s.right, &c).unwrap());
        let four = with_threads(Some(4), || run_pipeline(&s.left, &s.right, &c).unwrap());
        assert_eq!(one.disparity, four.disparity);
        assert_eq!(one.accounting, four.accounting);
        assert!(one.disparity.data().iter().all(|v| *v >= 0.0 && *v <= (D - 1) as f32));
        assert_eq!((one.disparity.height(), one.disparity.width()), (H, W));
    }
}

#[test]
fn fast_peak_below_acv_peak() {
    let s = scene(8, 2);
    let acv = run_pipeline(&s.left, &s.right, &cfg(PipelineMode::Acv, None)).unwrap();
    let fast = run_pipeline(&s.left, &s.right, &cfg(PipelineMode::FastAcv, Some(4))).unwrap();
    assert!(fast.accounting.peak() < acv.accounting.peak());
    let full = PipelineConfig::new(PipelineMode::Acv, 192);
    let acv = run_pipeline(&s.left, &s.right, &full).unwrap();
    let fast = run_pipeline(&s.left, &s.right, &PipelineConfig { mode: PipelineMode::FastAcv, ..full }).unwrap();
    assert!(fast.accounting.peak() < acv.accounting.peak());
}

#[test]
fn compact_volume_is_k_over_quarter_range_of_concat() {
    let s = generate_stereogram(&StereogramSpec::constant(64, 128, 4, 1)).unwrap();
    let base = PipelineConfig::new(PipelineMode::Acv, 192);
    let acv = run_pipeline(&s.left, &s.right, &base).unwrap();
    let concat = acv.accounting.size_of("concat").unwrap();
    assert_eq!(concat, 2 * 32 * 48 * 16 * 32);
    for k in [16, 24, 32, 48] {
        let fast = run_pipeline(&s.left, &s.right, &PipelineConfig { mode: PipelineMode::FastAcv, k: Some(k), ..base.clone() })
            .unwrap();
        let compact = fast.accounting.size_of("compact").unwrap();
        assert_eq!(compact * 48, concat * k);
        if k == 24 {
            assert_eq!(2 * compact, concat);
        }
    }
}

#[test]
fn full_hypothesis_set_close_to_k24() {
    let s = scene(8, 4);
    let mask = interior(&s);
    let run = |k| {
        let c = PipelineConfig { k: Some(k), ..PipelineConfig::new(PipelineMode::FastAcv, 192) };
        epe(&run_fast_acv_pipeline(&s.left, &s.right, &c).unwrap(), &s.gt, &mask).unwrap()
    };
    assert!((run(48) - run(24)).abs() < 0.2);
}

#[test]
fn attention_disparity_of_identical_views_is_near_zero() {
    let s = scene(6, 30);
    let c = PipelineConfig::new(PipelineMode::Acv, D);
    let p = build_feature_pyramid(&s.left, FeatureBackend::Census, c.acv.group_split).unwrap();
    let levels: [MapmLevel; 3] =
        std::array::from_fn(|i| MapmLevel { left: &p.levels[i], right: &p.levels[i], weights: c.patch_weights[i] });
    let patch = build_mapm_volume(&levels, &c.acv).unwrap();
    let a = generate_attention_weights(&patch, &pipeline_regularizer(c.regularizer, c.logit_scale));
    let d_att = regress_attention_disparity(&a).unwrap();
    assert!(d_att.data().iter().all(|v| *v < 1.0));
}

#[test]
fn gradient_backend_and_identity_regularizer_run() {
    let s = scene(8, 5);
    let mask = interior(&s);
    for mode in [PipelineMode::Acv, PipelineMode::FastAcv] {
        let c = PipelineConfig {
            feature_backend: FeatureBackend::Gradient,
            regularizer: RegularizerKind::Identity,
            ..cfg(mode, None)
        };
        let out = run_pipeline(&s.left, &s.right, &c).unwrap();
        assert!(epe(&out.disparity, &s.gt, &mask).unwrap() < 1.0, "{mode:?}");
    }
}

#[test]
fn rejects_bad_inputs() {
    let s = scene(8, 1);
    let small = GrayImage::new(64, 64, vec![0.5; 64 * 64]).unwrap();
    let err = run_acv_pipeline(&s.left, &small, &cfg(PipelineMode::Acv, None)).unwrap_err();
    assert!(err.to_string().contains("image size mismatch"));
    let odd = GrayImage::new(12, 16, vec![0.5; 12 * 16]).unwrap();
    assert!(run_acv_pipeline(&odd, &odd, &cfg(PipelineMode::Acv, None)).is_err());
    assert!(PipelineConfig::new(PipelineMode::Acv, 63).validate().is_err());
    assert!(PipelineConfig::new(PipelineMode::FastAcv, 36).validate().is_err());
    assert!(PipelineConfig::new(PipelineMode::Acv, 36).validate().is_ok());
    assert!(PipelineConfig { k: Some(9), ..PipelineConfig::new(PipelineMode::FastAcv, 32) }.validate().is_err());
    let mut c = PipelineConfig::new(PipelineMode::Acv, 32);
    c.d_max = 64;
    assert!(c.validate().is_err());
    assert_eq!(PipelineConfig::new(PipelineMode::FastAcv, 64).effective_k(), 16);
    assert_eq!(PipelineConfig::new(PipelineMode::FastAcv, 192).effective_k(), 24);
}

#[test]
fn one_bin_disparity_is_not_pulled_to_zero() {
    let s = scene(4, 11);
    let out = run_acv_pipeline(&s.left, &s.right, &cfg(PipelineMode::Acv, None)).unwrap();
    assert!(epe(&out, &s.gt, &interior(&s)).unwrap() < 0.5);
}
