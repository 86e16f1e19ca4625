//! The checked-in fuzz seeds must stay meaningful: each valid seed parses.

use std::path::PathBuf;

use sensorcal::calib::CalibrationResult;
use sensorcal::dataset::Dataset;
use sensorcal::eval::{parse_text_tables, PairwiseReport};
use sensorcal::labeling::LabelConfig;
use sensorcal::residuals::Weights;
use sensorcal::sidecar::{decode_cloud, decode_depth};
use sensorcal::synth::SceneConfig;

fn seed(target: &str, name: &str) -> Vec<u8> {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "../../fuzz/corpus", target, name].iter().collect();
    std::fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn text(target: &str, name: &str) -> String {
    String::from_utf8(seed(target, name)).unwrap()
}

#[test]
fn json_seeds_parse() {
    let (ds, _) = Dataset::from_json_str(&text("dataset_json", "small.json")).unwrap();
    assert_eq!(ds.collections.len(), 1);
    assert!(Dataset::from_json_str(&text("dataset_json", "empty.json")).is_err());
    SceneConfig::from_json_str(&text("scene_config", "test_scene.json")).unwrap();
    SceneConfig::from_json_str(&text("scene_config", "explicit.json")).unwrap();
    let cfg = LabelConfig::from_json_str(&text("label_config", "seeds.json")).unwrap();
    assert_eq!(cfg.seeds.len(), 2);
    LabelConfig::from_json_str(&text("label_config", "empty.json")).unwrap();
    CalibrationResult::from_json_str(&text("calibration_result", "result.json")).unwrap();
    let report = PairwiseReport::from_json_str(&text("pairwise_report", "report.json")).unwrap();
    assert_eq!(report.tables.len(), 5);
}

#[test]
fn text_seeds_parse() {
    // 21 pair rows plus one average per table
    assert_eq!(parse_text_tables(&text("report_text", "report.txt")).len(), 26);
    let w: Weights = text("weights_flag", "default.txt").parse().unwrap();
    assert_eq!(w, Weights::default());
    let w: Weights = text("weights_flag", "spaced.txt").parse().unwrap();
    assert_eq!((w.rgb, w.range), (0.5, 2.5));
}

#[test]
fn sidecar_seeds_decode() {
    assert_eq!(decode_cloud(&seed("cloud_sidecar", "c000_lidar_1.cloud")).unwrap().len(), 40);
    assert_eq!(decode_cloud(&seed("cloud_sidecar", "one_point.cloud")).unwrap().len(), 1);
    let img = decode_depth(&seed("depth_sidecar", "4x3.depth")).unwrap();
    assert_eq!((img.width, img.height), (4, 3));
    assert!(!img.is_valid(2, 0));
    assert!(decode_depth(&seed("depth_sidecar", "header_only.depth")).is_err());
}
