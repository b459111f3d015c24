use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn scalematch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scalematch"))
        .args(args)
        .env_remove("SCALEMATCH_SIDECAR")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn texture(w: u32, h: u32, phase: f32) -> image::RgbImage {
    image::RgbImage::from_fn(w, h, |x, y| {
        let (fx, fy) = (x as f32 + phase, y as f32);
        let v = 0.5
            + 0.2 * (fx * 0.21).sin() * (fy * 0.17).cos()
            + 0.15 * ((fx + 2.0 * fy) * 0.09).sin()
            + 0.1 * ((fx * fy) * 0.003).cos();
        let c = |t: f32| (t.clamp(0.0, 1.0) * 255.0).round() as u8;
        image::Rgb([c(v), c(v * 0.8 + 0.1), c(1.0 - v)])
    })
}

fn save(img: &image::RgbImage, path: &Path) {
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    img.save(path).unwrap();
}

fn kitti_fixture(dir: &Path) -> PathBuf {
    let root = dir.join("kitti");
    fs::create_dir_all(root.join("poses")).unwrap();
    fs::write(root.join("poses/00.txt"), "1 0 0 0 0 1 0 0 0 0 1 0\n".repeat(11)).unwrap();
    let seq = root.join("sequences/00");
    fs::create_dir_all(&seq).unwrap();
    fs::write(
        seq.join("calib.txt"),
        "P0: 300 0 80 0 0 300 60 0 0 0 1 0\nP2: 300 0 80 0 0 300 60 0 0 0 1 0\n",
    )
    .unwrap();
    for frame in [0, 5, 10] {
        save(&texture(160, 120, frame as f32), &seq.join(format!("image_2/{frame:06}.png")));
    }
    root
}

fn pairs_fixture(dir: &Path) -> PathBuf {
    let root = dir.join("pairs");
    for (i, scene) in ["atrium", "bridge"].iter().enumerate() {
        let img = texture(160, 120, 7.0 * i as f32);
        save(&img, &root.join(scene).join("near.png"));
        save(&img, &root.join(scene).join("far.png"));
        let corr: Vec<Value> = (0..10)
            .map(|k| {
                let p = [20.0 + 12.0 * k as f64, 15.0 + 9.0 * ((k * 7) % 10) as f64];
                serde_json::json!({"near": p, "far": p})
            })
            .collect();
        fs::write(
            root.join(scene).join("annotation.json"),
            serde_json::json!({ "correspondences": corr }).to_string(),
        )
        .unwrap();
    }
    root
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

const HEADER: &str = "sequence,near,far,gap,method,t_err,r_err,ste,log_ste,failed,match_count";

#[test]
fn localize_identical_images_gives_identity() {
    let dir = TempDir::new().unwrap();
    let img = dir.path().join("a.png");
    save(&texture(160, 120, 0.0), &img);
    let out = dir.path().join("result.json");
    let img = img.to_str().unwrap();
    let o = scalematch(&[
        "localize", img, img, "--method", "sift_only", "--estimator", "homography",
        "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["failed"], false);
    for key in ["inlier_count", "object_match_count", "point_match_count", "timings_ms"] {
        assert!(!v[key].is_null(), "missing {key}");
    }
    assert_eq!(v["estimate"]["type"], "homography");
    let rows = v["estimate"]["matrix"].as_array().unwrap();
    let h: Vec<f64> = rows
        .iter()
        .flat_map(|r| r.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()))
        .collect();
    let s = h[8];
    let eye = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    let frob: f64 = h.iter().zip(eye).map(|(a, b)| (a / s - b).powi(2)).sum::<f64>().sqrt();
    assert!(frob < 1e-3, "{h:?}");
}

#[test]
fn localize_blank_images_reports_failure_with_exit_zero() {
    let dir = TempDir::new().unwrap();
    let img = dir.path().join("blank.png");
    save(&image::RgbImage::from_pixel(96, 96, image::Rgb([128, 128, 128])), &img);
    let img = img.to_str().unwrap();
    let o = scalematch(&["localize", img, img]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["failed"], true);
    assert!(v["estimate"].is_null());
}

#[test]
fn localize_missing_file_exits_nonzero() {
    let o = scalematch(&["localize", "/nonexistent/a.png", "/nonexistent/b.png"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("/nonexistent/a.png"), "{}", stderr(&o));
}

#[test]
fn localize_config_errors_exit_nonzero() {
    let dir = TempDir::new().unwrap();
    let img = dir.path().join("a.png");
    save(&texture(64, 64, 0.0), &img);
    let img = img.to_str().unwrap();
    let essential = scalematch(&["localize", img, img, "--estimator", "essential"]);
    assert!(!essential.status.success());
    assert!(stderr(&essential).contains("intrinsics"));
    for bad in [
        vec!["--method", "edges"],
        vec!["--resolution", "100"],
        vec!["--layer", "fc1000"],
        vec!["--backend", "gpu"],
        vec!["--intrinsics", "1,2,3"],
    ] {
        let mut args = vec!["localize", img, img];
        args.extend(bad.iter().copied());
        assert!(!scalematch(&args).status.success(), "{bad:?}");
    }
}

#[test]
fn sidecar_environment_variable_overrides_the_command() {
    let dir = TempDir::new().unwrap();
    let img = dir.path().join("a.png");
    save(&texture(96, 96, 0.0), &img);
    let img = img.to_str().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_scalematch"))
        .args(["localize", img, img, "--backend", "sidecar:configured-sidecar"])
        .env("SCALEMATCH_SIDECAR", "exit 0")
        .output()
        .unwrap();
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.contains("`exit 0`") && !err.contains("configured-sidecar"), "{err}");
}

#[test]
fn kitti_evaluation_writes_one_row_per_pair_and_method() {
    let dir = TempDir::new().unwrap();
    let root = kitti_fixture(dir.path());
    let out = dir.path().join("out");
    let o = scalematch(&[
        "evaluate", "--dataset", &format!("kitti:{}", root.display()), "--sequences", "00",
        "--out", out.to_str().unwrap(), "--jobs", "2",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = read_csv(&out.join("records.csv"));
    assert_eq!(rows[0].join(","), HEADER);
    assert_eq!(rows.len(), 1 + 9);
    for method in ["sift_only", "objects_only", "combined"] {
        let mine: Vec<_> = rows[1..].iter().filter(|r| r[4] == method).collect();
        assert_eq!(mine.len(), 3, "{method}");
        let pairs: Vec<(&str, &str, &str)> =
            mine.iter().map(|r| (r[1].as_str(), r[2].as_str(), r[3].as_str())).collect();
        assert_eq!(pairs, vec![("0", "5", "1"), ("0", "10", "2"), ("5", "10", "1")]);
        for r in mine {
            assert_eq!(r[0], "00");
            assert!(r[5].parse::<f64>().is_ok() && r[6].parse::<f64>().is_ok());
            assert!(r[7].is_empty() && r[8].is_empty());
        }
    }
    let groups = read_csv(&out.join("groups.csv"));
    assert_eq!(groups.len(), 1 + 2 * 3);
    let json: Value = serde_json::from_str(&fs::read_to_string(out.join("groups.json")).unwrap()).unwrap();
    let methods = json.as_array().unwrap();
    assert_eq!(methods.len(), 3);
    for m in methods {
        assert_eq!(m["groups"].as_array().unwrap().len(), 2);
        // Identical poses put every group at distance zero, where no log fit exists.
        assert!(m["t_err_fit"].is_null() && m["r_err_fit"].is_null() && m["failure_rate_fit"].is_null());
    }
}

#[test]
fn kitti_evaluation_respects_method_and_estimator_flags() {
    let dir = TempDir::new().unwrap();
    let root = kitti_fixture(dir.path());
    let out = dir.path().join("out");
    let dataset = format!("kitti:{}", root.display());
    let o = scalematch(&[
        "evaluate", "--dataset", &dataset, "--sequences", "00", "--method", "combined",
        "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = read_csv(&out.join("records.csv"));
    assert_eq!(rows.len(), 1 + 3);
    assert!(rows[1..].iter().all(|r| r[4] == "combined"));

    let wrong = scalematch(&[
        "evaluate", "--dataset", &dataset, "--sequences", "00", "--estimator", "homography",
        "--out", out.to_str().unwrap(),
    ]);
    assert!(!wrong.status.success());
    let missing_seq = scalematch(&["evaluate", "--dataset", &dataset, "--out", out.to_str().unwrap()]);
    assert!(!missing_seq.status.success());
    let absent = scalematch(&[
        "evaluate", "--dataset", &dataset, "--sequences", "07", "--out", out.to_str().unwrap(),
    ]);
    assert!(!absent.status.success());
    assert!(stderr(&absent).contains("07"), "{}", stderr(&absent));
}

#[test]
fn missing_kitti_frame_is_a_layout_error() {
    let dir = TempDir::new().unwrap();
    let root = kitti_fixture(dir.path());
    fs::remove_file(root.join("sequences/00/image_2/000005.png")).unwrap();
    let o = scalematch(&[
        "evaluate", "--dataset", &format!("kitti:{}", root.display()), "--sequences", "00",
        "--out", dir.path().join("out").to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("000005.png"), "{}", stderr(&o));
}

#[test]
fn pair_evaluation_writes_rows_and_mean_log_ste() {
    let dir = TempDir::new().unwrap();
    let root = pairs_fixture(dir.path());
    let out = dir.path().join("out");
    let o = scalematch(&[
        "evaluate", "--dataset", &format!("pairs:{}", root.display()), "--method", "all",
        "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = read_csv(&out.join("records.csv"));
    assert_eq!(rows[0].join(","), HEADER);
    assert_eq!(rows.len(), 1 + 6);
    for method in ["sift_only", "objects_only", "combined"] {
        let scenes: Vec<&str> =
            rows[1..].iter().filter(|r| r[4] == method).map(|r| r[0].as_str()).collect();
        assert_eq!(scenes, vec!["atrium", "bridge"], "{method}");
    }
    for r in &rows[1..] {
        assert_eq!((r[1].as_str(), r[2].as_str(), r[3].as_str()), ("near.png", "far.png", ""));
        let ste: f64 = r[7].parse().unwrap();
        let log_ste: f64 = r[8].parse().unwrap();
        assert!((log_ste - ste.max(1.0).ln()).abs() < 1e-9);
    }
    let summary: Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let methods = summary["methods"].as_array().unwrap();
    assert_eq!(methods.len(), 3);
    for m in methods {
        let name = m["method"].as_str().unwrap();
        let mean = m["mean_log_ste"].as_f64().unwrap();
        let logs: Vec<f64> = rows[1..]
            .iter()
            .filter(|r| r[4] == name)
            .map(|r| r[8].parse().unwrap())
            .collect();
        assert!((mean - logs.iter().sum::<f64>() / logs.len() as f64).abs() < 1e-9);
        assert_eq!(m["pairs"], 2);
    }
    let scenes = summary["scenes"].as_array().unwrap();
    assert_eq!(scenes.len(), 2);
    assert!((scenes[0]["median_scale_change"].as_f64().unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn evaluation_csv_is_byte_identical_across_runs_and_job_counts() {
    let dir = TempDir::new().unwrap();
    let root = pairs_fixture(dir.path());
    let dataset = format!("pairs:{}", root.display());
    let mut outputs = Vec::new();
    for (i, jobs) in ["1", "3", "3"].iter().enumerate() {
        let out = dir.path().join(format!("out{i}"));
        let o = scalematch(&[
            "evaluate", "--dataset", &dataset, "--jobs", jobs, "--seed", "11",
            "--out", out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        outputs.push(fs::read(out.join("records.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[1], outputs[2]);
}

#[test]
fn malformed_pair_annotation_exits_nonzero() {
    let dir = TempDir::new().unwrap();
    let root = pairs_fixture(dir.path());
    fs::write(root.join("bridge/annotation.json"), r#"{"correspondences": []}"#).unwrap();
    let o = scalematch(&[
        "evaluate", "--dataset", &format!("pairs:{}", root.display()),
        "--out", dir.path().join("out").to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("bridge"), "{}", stderr(&o));
}
