//! Dataset evaluation: per-pair localization fanned out over worker threads,
//! with results written in a fixed order.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use scalematch_core::descriptors::DescriptorBackend;
use scalematch_core::evaluation::{
    build_pairs, fit_log_curve, kitti_image_path, kitti_paths, load_kitti_sequence,
    load_pair_dataset, mean_log_ste, median_scale_change, summarize_groups, write_records_csv,
    EvalRecord, GroupSummary, PairAnnotation, PairRecord,
};
use scalematch_core::geometry::{CameraIntrinsics, Estimate};
use scalematch_core::matching::MatchMethod;
use scalematch_core::pipeline::{localize_pair, EstimatorKind, Localization};
use serde::Serialize;

use crate::{open_image, CommonArgs};

#[derive(Clone, Debug)]
pub enum Dataset {
    Kitti(PathBuf),
    Pairs(PathBuf),
}

impl FromStr for Dataset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            Some(("kitti", root)) if !root.is_empty() => Ok(Dataset::Kitti(root.into())),
            Some(("pairs", root)) if !root.is_empty() => Ok(Dataset::Pairs(root.into())),
            _ => Err(format!("unknown dataset `{s}` (expected kitti:<root> or pairs:<root>)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MethodChoice {
    All,
    One(MatchMethod),
}

impl FromStr for MethodChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "all" {
            Ok(MethodChoice::All)
        } else {
            s.parse().map(MethodChoice::One)
        }
    }
}

#[derive(Args)]
pub struct EvaluateArgs {
    /// `kitti:<root>` or `pairs:<root>`.
    #[arg(long)]
    dataset: Dataset,
    /// Comma-separated KITTI sequence names.
    #[arg(long, value_delimiter = ',')]
    sequences: Vec<String>,
    /// Comma-separated methods, or `all`.
    #[arg(long, value_delimiter = ',', default_value = "all")]
    method: Vec<MethodChoice>,
    /// Defaults to `essential` for KITTI and `homography` for pair datasets;
    /// those are the only estimators each dataset can score.
    #[arg(long)]
    estimator: Option<EstimatorKind>,
    /// Worker threads; each owns its own descriptor backend.
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Keep every n-th KITTI frame.
    #[arg(long, default_value_t = 5)]
    subsample: usize,
    /// Largest frame separation, in kept frames.
    #[arg(long, default_value_t = 10)]
    max_gap: usize,
    #[command(flatten)]
    common: CommonArgs,
}

fn methods(choices: &[MethodChoice]) -> Vec<MatchMethod> {
    let mut out: Vec<MatchMethod> = Vec::new();
    for c in choices {
        let add: &[MatchMethod] = match c {
            MethodChoice::All => &MatchMethod::ALL,
            MethodChoice::One(m) => std::slice::from_ref(m),
        };
        for m in add {
            if !out.contains(m) {
                out.push(*m);
            }
        }
    }
    out.sort_by_key(|m| MatchMethod::ALL.iter().position(|x| x == m));
    out
}

/// Runs `work` on every task with at most `jobs` threads. Each thread builds
/// its own context with `init`. Results keep task order.
fn run_parallel<T: Sync, C, R: Send>(
    tasks: &[T],
    jobs: usize,
    init: impl Fn() -> Result<C> + Sync,
    work: impl Fn(&mut C, &T) -> Result<R> + Sync,
) -> Result<Vec<R>> {
    let slots: Vec<Mutex<Option<R>>> = tasks.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let first_error: Mutex<Option<(usize, anyhow::Error)>> = Mutex::new(None);
    let threads = jobs.clamp(1, tasks.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| {
                let mut ctx = match init() {
                    Ok(c) => c,
                    Err(e) => {
                        first_error.lock().unwrap().get_or_insert((0, e));
                        return;
                    }
                };
                loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= tasks.len() || first_error.lock().unwrap().is_some() {
                        break;
                    }
                    match work(&mut ctx, &tasks[i]) {
                        Ok(r) => *slots[i].lock().unwrap() = Some(r),
                        Err(e) => {
                            let mut slot = first_error.lock().unwrap();
                            if slot.as_ref().is_none_or(|(j, _)| i < *j) {
                                *slot = Some((i, e));
                            }
                        }
                    }
                }
            });
        }
    });
    if let Some((_, e)) = first_error.into_inner().unwrap() {
        return Err(e);
    }
    Ok(slots
        .into_iter()
        .map(|s| s.into_inner().unwrap().expect("every task ran"))
        .collect())
}

struct KittiTask<'a> {
    root: &'a Path,
    sequence: &'a str,
    k: CameraIntrinsics,
    pair: PairRecord,
}

struct Runner<'a> {
    common: &'a CommonArgs,
    methods: Vec<MatchMethod>,
    estimator: EstimatorKind,
}

impl Runner<'_> {
    fn localize_all(
        &self,
        backend: &mut dyn DescriptorBackend,
        near: &Path,
        far: &Path,
        k: Option<&CameraIntrinsics>,
    ) -> Result<Vec<(MatchMethod, Localization)>> {
        let a = open_image(near)?;
        let b = open_image(far)?;
        self.methods
            .iter()
            .map(|&m| {
                let cfg = self.common.pipeline(m, self.estimator);
                let loc = localize_pair(&cfg, backend, &a, &b, k)
                    .with_context(|| format!("{m} on {} / {}", near.display(), far.display()))?;
                Ok((m, loc))
            })
            .collect()
    }
}

#[derive(Serialize)]
struct Fit {
    a: f64,
    b: f64,
}

#[derive(Serialize)]
struct MethodGroups {
    method: MatchMethod,
    groups: Vec<GroupSummary>,
    /// `y = a + b ln(mean_distance)` per metric; null when the distances
    /// cannot support a fit.
    t_err_fit: Option<Fit>,
    r_err_fit: Option<Fit>,
    failure_rate_fit: Option<Fit>,
}

fn fit(groups: &[GroupSummary], y: impl Fn(&GroupSummary) -> f64) -> Option<Fit> {
    let points: Vec<(f64, f64)> = groups.iter().map(|g| (g.mean_distance, y(g))).collect();
    fit_log_curve(&points).ok().map(|(a, b)| Fit { a, b })
}

#[derive(Serialize)]
struct GroupRow {
    method: MatchMethod,
    gap: usize,
    mean_distance: f64,
    mean_t_err: f64,
    mean_r_err: f64,
    failure_rate: f64,
    pair_count: usize,
}

fn write_groups(out: &Path, records: &[EvalRecord], methods: &[MatchMethod]) -> Result<()> {
    let mut summaries = Vec::new();
    let mut csv = csv::Writer::from_path(out.join("groups.csv"))?;
    for &method in methods {
        let mine: Vec<EvalRecord> = records.iter().filter(|r| r.method == method).cloned().collect();
        let groups = summarize_groups(&mine);
        for g in &groups {
            csv.serialize(GroupRow {
                method,
                gap: g.gap_j,
                mean_distance: g.mean_distance,
                mean_t_err: g.mean_t_err,
                mean_r_err: g.mean_r_err,
                failure_rate: g.failure_rate,
                pair_count: g.pair_count,
            })?;
        }
        summaries.push(MethodGroups {
            method,
            t_err_fit: fit(&groups, |g| g.mean_t_err),
            r_err_fit: fit(&groups, |g| g.mean_r_err),
            failure_rate_fit: fit(&groups, |g| g.failure_rate),
            groups,
        });
    }
    csv.flush()?;
    write_json(&out.join("groups.json"), &summaries)
}

#[derive(Serialize)]
struct MethodSummary {
    method: MatchMethod,
    mean_log_ste: Option<f64>,
    failures: usize,
    pairs: usize,
}

#[derive(Serialize)]
struct SceneSummary {
    scene: String,
    median_scale_change: Option<f64>,
}

#[derive(Serialize)]
struct PairsSummary {
    methods: Vec<MethodSummary>,
    scenes: Vec<SceneSummary>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn kitti_records(args: &EvaluateArgs, runner: &Runner, root: &Path, jobs: usize) -> Result<Vec<EvalRecord>> {
    if args.sequences.is_empty() {
        bail!("--sequences is required for KITTI datasets");
    }
    let mut tasks = Vec::new();
    for seq in &args.sequences {
        let (poses_file, calib_file, _) = kitti_paths(root, seq);
        let (poses, k) = load_kitti_sequence(&poses_file, &calib_file)
            .with_context(|| format!("loading KITTI sequence {seq}"))?;
        for pair in build_pairs(&poses, args.subsample, args.max_gap)? {
            tasks.push(KittiTask { root, sequence: seq, k, pair });
        }
    }
    let per_task = run_parallel(
        &tasks,
        jobs,
        || args.common.backend(),
        |backend, t| {
            let near = kitti_image_path(t.root, t.sequence, t.pair.index_near);
            let far = kitti_image_path(t.root, t.sequence, t.pair.index_far);
            let results = runner.localize_all(backend.as_mut(), &near, &far, Some(&t.k))?;
            Ok(results
                .into_iter()
                .map(|(m, loc)| {
                    let pose = match loc.estimate {
                        Some(Estimate::Pose(p)) => Some(p),
                        _ => None,
                    };
                    EvalRecord::kitti(t.sequence, &t.pair, m, pose, loc.point_match_count)
                })
                .collect::<Vec<_>>())
        },
    )?;
    Ok(per_task.into_iter().flatten().collect())
}

fn pair_records(runner: &Runner, scenes: &[PairAnnotation], jobs: usize, common: &CommonArgs) -> Result<Vec<EvalRecord>> {
    let per_task = run_parallel(
        scenes,
        jobs,
        || common.backend(),
        |backend, scene| {
            let results = runner.localize_all(backend.as_mut(), &scene.near_image, &scene.far_image, None)?;
            Ok(results
                .into_iter()
                .map(|(m, loc)| {
                    let h = match loc.estimate {
                        Some(Estimate::Homography { matrix }) => Some(matrix),
                        _ => None,
                    };
                    EvalRecord::scene(scene, m, h, loc.point_match_count)
                })
                .collect::<Vec<_>>())
        },
    )?;
    Ok(per_task.into_iter().flatten().collect())
}

pub fn run(args: EvaluateArgs) -> Result<()> {
    args.common.check()?;
    let methods = methods(&args.method);
    let natural = match args.dataset {
        Dataset::Kitti(_) => EstimatorKind::Essential,
        Dataset::Pairs(_) => EstimatorKind::Homography,
    };
    if let Some(e) = args.estimator {
        if e != natural {
            bail!("this dataset is scored with the {natural} estimator, not {e}");
        }
    }
    let jobs = match args.jobs {
        Some(0) => bail!("--jobs must be at least 1"),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let runner = Runner {
        common: &args.common,
        methods: methods.clone(),
        estimator: natural,
    };

    let records = match &args.dataset {
        Dataset::Kitti(root) => {
            let records = kitti_records(&args, &runner, root, jobs)?;
            write_groups(&args.out, &records, &methods)?;
            records
        }
        Dataset::Pairs(root) => {
            let scenes = load_pair_dataset(root)
                .with_context(|| format!("loading pair dataset {}", root.display()))?;
            if scenes.is_empty() {
                return Err(anyhow!("no scenes found under {}", root.display()));
            }
            let records = pair_records(&runner, &scenes, jobs, &args.common)?;
            let summary = PairsSummary {
                methods: methods
                    .iter()
                    .map(|&m| {
                        let mine = records.iter().filter(|r| r.method == m);
                        MethodSummary {
                            method: m,
                            mean_log_ste: mean_log_ste(&records, m),
                            failures: mine.clone().filter(|r| r.failed).count(),
                            pairs: mine.count(),
                        }
                    })
                    .collect(),
                scenes: scenes
                    .iter()
                    .map(|s| SceneSummary {
                        scene: s.scene.clone(),
                        median_scale_change: median_scale_change(s.correspondences()).ok(),
                    })
                    .collect(),
            };
            write_json(&args.out.join("summary.json"), &summary)?;
            records
        }
    };

    let path = args.out.join("records.csv");
    let file = fs::File::create(&path).with_context(|| format!("writing {}", path.display()))?;
    write_records_csv(std::io::BufWriter::new(file), &records)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_choices_expand_in_canonical_order() {
        use MatchMethod::*;
        assert_eq!(methods(&[MethodChoice::All]), MatchMethod::ALL.to_vec());
        assert_eq!(
            methods(&[MethodChoice::One(Combined), MethodChoice::One(SiftOnly), MethodChoice::One(Combined)]),
            vec![SiftOnly, Combined]
        );
        assert_eq!("all".parse::<MethodChoice>().unwrap(), MethodChoice::All);
        assert!("both".parse::<MethodChoice>().is_err());
    }

    #[test]
    fn dataset_specs() {
        assert!(matches!("kitti:/data/kitti".parse(), Ok(Dataset::Kitti(p)) if p == Path::new("/data/kitti")));
        assert!(matches!("pairs:x".parse(), Ok(Dataset::Pairs(_))));
        for bad in ["kitti:", "x:/a", "/a"] {
            assert!(bad.parse::<Dataset>().is_err(), "{bad}");
        }
    }

    #[test]
    fn parallel_results_keep_task_order() {
        let tasks: Vec<u64> = (0..97).collect();
        for jobs in [1, 3, 16] {
            let out = run_parallel(&tasks, jobs, || Ok(0u64), |n, &t| {
                *n += 1;
                Ok(t * t)
            })
            .unwrap();
            assert_eq!(out, tasks.iter().map(|t| t * t).collect::<Vec<_>>());
        }
    }

    #[test]
    fn parallel_reports_the_earliest_failure() {
        let tasks: Vec<usize> = (0..50).collect();
        let err = run_parallel(&tasks, 1, || Ok(()), |_, &t| {
            if t >= 7 {
                bail!("task {t}")
            }
            Ok(t)
        })
        .unwrap_err();
        assert_eq!(err.to_string(), "task 7");
        assert!(run_parallel(&tasks, 4, || -> Result<()> { bail!("no backend") }, |_, &t| Ok(t)).is_err());
    }
}
