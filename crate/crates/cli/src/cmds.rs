//! Implementations of the four subcommands.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use rayon::prelude::*;

use glseg_core::config::PipelineConfig;
use glseg_core::error::Error;
use glseg_core::eval::{aggregate, all_metrics, LabeledSegmentation, MetricValues};
use glseg_core::formats;
use glseg_core::imgproc::load_image;
use glseg_core::multiclass::SoftBoundary;
use glseg_core::pipeline::{
    run_partition, run_pipeline, PhaseTimings, RegionSource, PHASE_GRAPH, PHASE_MULTI,
    PHASE_REGION, PHASE_TOTAL,
};
use glseg_core::spectral::normalize_eigenvector;

use crate::manifest::RunManifest;
use crate::{BenchArgs, CliError, CliResult, EvalArgs, PartitionArgs, SegmentArgs};

fn load_config(path: Option<&PathBuf>) -> CliResult<PipelineConfig<f64>> {
    Ok(match path {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    })
}

fn region_source(
    superpixels: Option<&PathBuf>,
    edges: Option<&PathBuf>,
    target_n: Option<usize>,
) -> RegionSource {
    match (superpixels, edges) {
        (Some(labels), Some(edges)) => {
            if target_n.is_some() {
                log::warn!("--target-n is ignored with external superpixels");
            }
            RegionSource::External {
                labels: labels.clone(),
                edges: edges.clone(),
            }
        }
        _ => RegionSource::Internal { target_n },
    }
}

fn create_out_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(())
}

/// Default label map threshold: midway through the soft boundary range.
const LABEL_THRESHOLD: f64 = 0.5;

pub fn segment(args: &SegmentArgs) -> CliResult<()> {
    let img = load_image::<f64>(&args.image)?;
    let cfg = load_config(args.config.as_ref())?;
    let source = region_source(
        args.superpixels.as_ref(),
        args.edges.as_ref(),
        args.target_n,
    );
    create_out_dir(&args.out)?;

    let out = run_pipeline(&img, &cfg, &source, args.seed)?;
    let mut manifest = RunManifest::new(&args.image, args.seed, &cfg, out.phases, true);

    let write_labels = |name: &str, labels: &Array2<u32>| -> CliResult<()> {
        formats::write_label_png(&args.out.join(name), labels)?;
        Ok(())
    };
    write_labels("superpixels.png", out.partition.regions.labels())?;
    manifest.add_output("superpixels", "superpixels.png");

    write_labels("labels.png", &out.soft.segmentation_at(LABEL_THRESHOLD))?;
    manifest.add_output("labels", "labels.png");

    formats::write_float_png16(&args.out.join("boundary.png"), &out.soft.to_pixel_map())?;
    manifest.add_output("boundary", "boundary.png");
    formats::write_float_csv(&args.out.join("boundary_h.csv"), &out.soft.horiz)?;
    manifest.add_output("boundary_h", "boundary_h.csv");
    formats::write_float_csv(&args.out.join("boundary_v.csv"), &out.soft.vert)?;
    manifest.add_output("boundary_v", "boundary_v.csv");

    formats::write_matrix_csv(
        &args.out.join("eigenvectors.csv"),
        &out.partition.basis.vectors,
    )?;
    manifest.add_output("eigenvectors", "eigenvectors.csv");

    for &t in &args.scales {
        let name = format!("seg_t{t}.png");
        write_labels(&name, &out.soft.segmentation_at(t))?;
        manifest.add_output(&format!("seg_t{t}"), &name);
    }

    manifest.write(&args.out.join("manifest.json"))?;
    println!(
        "segmented {} in {:.3}s ({} regions, {} boundary thresholds) -> {}",
        args.image.display(),
        out.phases.total,
        out.partition.regions.len(),
        out.soft.thresholds().len(),
        args.out.display()
    );
    Ok(())
}

pub fn partition(args: &PartitionArgs) -> CliResult<()> {
    let img = load_image::<f64>(&args.image)?;
    let cfg = load_config(args.config.as_ref())?;
    let source = region_source(
        args.superpixels.as_ref(),
        args.edges.as_ref(),
        args.target_n,
    );
    create_out_dir(&args.out)?;

    let clock = Instant::now();
    let out = run_partition(&img, &cfg, &source, args.seed)?;
    let phases = PhaseTimings {
        region_structure: out.region_time,
        graph_partition: out.graph_time,
        multiclass: 0.0,
        total: clock.elapsed().as_secs_f64(),
    };
    phases.validate()?;
    let mut manifest = RunManifest::new(&args.image, args.seed, &cfg, phases, false);

    formats::write_label_png(&args.out.join("superpixels.png"), out.regions.labels())?;
    manifest.add_output("superpixels", "superpixels.png");
    formats::write_matrix_csv(&args.out.join("eigenvectors.csv"), &out.basis.vectors)?;
    manifest.add_output("eigenvectors", "eigenvectors.csv");

    // One grayscale image per eigenvector, painted over the regions.
    let labels = out.regions.labels();
    let (h, w) = out.regions.dims();
    for k in 0..out.basis.vectors.ncols() {
        let column: Vec<f64> = out.basis.vectors.column(k).iter().cloned().collect();
        let values = normalize_eigenvector(&column);
        let plane = Array2::from_shape_fn((h, w), |(r, c)| values[labels[[r, c]] as usize]);
        let name = format!("eig_{k}.png");
        formats::write_float_png16(&args.out.join(&name), &plane)?;
        manifest.add_output(&format!("eig_{k}"), &name);
    }

    manifest.write(&args.out.join("manifest.json"))?;
    println!(
        "partitioned {} in {:.3}s ({} regions, {} eigenvectors) -> {}",
        args.image.display(),
        phases.total,
        out.regions.len(),
        out.basis.vectors.ncols(),
        args.out.display()
    );
    Ok(())
}

/// Stem = file name up to the first dot, so `100075.2.png` groups with
/// `100075.png`.
fn stem_of(path: &Path) -> Option<String> {
    let name = path.file_name()?.to_str()?;
    Some(name.split('.').next().unwrap_or(name).to_string())
}

fn is_grid_file(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("png" | "csv")
    )
}

fn list_dir(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn collect_gts(dir: &Path) -> CliResult<BTreeMap<String, Vec<PathBuf>>> {
    let mut out: BTreeMap<String, Vec<PathBuf>> = BTreeMap::new();
    for path in list_dir(dir)? {
        if !is_grid_file(&path) {
            continue;
        }
        if let Some(stem) = stem_of(&path) {
            out.entry(stem).or_default().push(path);
        }
    }
    Ok(out)
}

enum SegEntry {
    Labels(PathBuf),
    Soft { h: PathBuf, v: PathBuf },
}

fn collect_label_segs(dir: &Path) -> CliResult<BTreeMap<String, SegEntry>> {
    let mut out = BTreeMap::new();
    for path in list_dir(dir)? {
        if !is_grid_file(&path) {
            continue;
        }
        if let Some(stem) = stem_of(&path) {
            if out.insert(stem.clone(), SegEntry::Labels(path)).is_some() {
                return Err(CliError::Eval(format!(
                    "multiple segmentations share the stem {stem:?}"
                )));
            }
        }
    }
    Ok(out)
}

fn collect_soft_segs(dir: &Path) -> CliResult<BTreeMap<String, SegEntry>> {
    let mut halves: BTreeMap<String, (Option<PathBuf>, Option<PathBuf>)> = BTreeMap::new();
    for path in list_dir(dir)? {
        let Some(name) = path.file_name().and_then(|n| n.to_str()).map(String::from) else {
            continue;
        };
        if let Some(stem) = name.strip_suffix("_h.csv") {
            halves.entry(stem.to_string()).or_default().0 = Some(path);
        } else if let Some(stem) = name.strip_suffix("_v.csv") {
            halves.entry(stem.to_string()).or_default().1 = Some(path);
        }
    }
    let mut out = BTreeMap::new();
    for (stem, pair) in halves {
        match pair {
            (Some(h), Some(v)) => {
                out.insert(stem, SegEntry::Soft { h, v });
            }
            _ => {
                return Err(CliError::Eval(format!(
                    "stem {stem:?} is missing one of its _h.csv/_v.csv boundary files"
                )))
            }
        }
    }
    Ok(out)
}

fn load_gt_set(paths: &[PathBuf]) -> CliResult<Vec<LabeledSegmentation>> {
    paths
        .iter()
        .map(|p| Ok(LabeledSegmentation::from_labels(&formats::read_label_grid(p)?)?))
        .collect()
}

fn load_soft(h: &Path, v: &Path) -> CliResult<SoftBoundary<f64>> {
    let horiz: Array2<f64> = formats::read_float_grid(h)?;
    let vert: Array2<f64> = formats::read_float_grid(v)?;
    let (hh, hw) = horiz.dim();
    let (vh, vw) = vert.dim();
    if hh != vh + 1 || hw + 1 != vw {
        return Err(CliError::Core(Error::Dimension {
            expected: format!("horizontal {}x{} with vertical {}x{}", hh, hw, hh - 1, hw + 1),
            got: format!("vertical {vh}x{vw}"),
        }));
    }
    Ok(SoftBoundary { horiz, vert })
}

fn default_scales() -> Vec<f64> {
    (0..=20).map(|i| f64::from(i) * 0.05).collect()
}

pub fn eval(args: &EvalArgs) -> CliResult<()> {
    let gts = collect_gts(&args.gt)?;
    if gts.is_empty() {
        return Err(CliError::Eval(format!(
            "no ground-truth label maps in {}",
            args.gt.display()
        )));
    }
    let segs = if args.soft {
        collect_soft_segs(&args.seg)?
    } else {
        collect_label_segs(&args.seg)?
    };
    if segs.is_empty() {
        return Err(CliError::Eval(format!(
            "no segmentations in {}",
            args.seg.display()
        )));
    }

    let missing_gt: Vec<&String> = segs.keys().filter(|s| !gts.contains_key(*s)).collect();
    let missing_seg: Vec<&String> = gts.keys().filter(|s| !segs.contains_key(*s)).collect();
    if !missing_gt.is_empty() || !missing_seg.is_empty() {
        let mut msg = String::from("unmatched stems:");
        for s in missing_gt {
            msg.push_str(&format!(" {s:?} (no ground truth)"));
        }
        for s in missing_seg {
            msg.push_str(&format!(" {s:?} (no segmentation)"));
        }
        return Err(CliError::Eval(msg));
    }

    let scales = if args.soft {
        if args.scales.is_empty() {
            default_scales()
        } else {
            args.scales.clone()
        }
    } else {
        vec![]
    };

    let stems: Vec<&String> = segs.keys().collect();
    let rows: Vec<CliResult<Vec<MetricValues<f64>>>> = stems
        .par_iter()
        .map(|stem| {
            let gt_set = load_gt_set(&gts[*stem])?;
            match &segs[*stem] {
                SegEntry::Labels(path) => {
                    let seg =
                        LabeledSegmentation::from_labels(&formats::read_label_grid(path)?)?;
                    Ok(vec![all_metrics(&seg, &gt_set)?])
                }
                SegEntry::Soft { h, v } => {
                    let soft = load_soft(h, v)?;
                    scales
                        .iter()
                        .map(|&t| {
                            let seg =
                                LabeledSegmentation::from_labels(&soft.segmentation_at(t))?;
                            Ok(all_metrics(&seg, &gt_set)?)
                        })
                        .collect()
                }
            }
        })
        .collect();
    let mut table = Vec::with_capacity(rows.len());
    for row in rows {
        table.push(row?);
    }

    let report = aggregate(&table)?;

    if let Some(csv_path) = &args.out {
        let mut text = String::from("stem,scale,covering,pri,voi\n");
        for (stem, row) in stems.iter().zip(&table) {
            for (s, m) in row.iter().enumerate() {
                let scale = if args.soft {
                    format!("{}", scales[s])
                } else {
                    String::from("-")
                };
                text.push_str(&format!(
                    "{stem},{scale},{:.6},{:.6},{:.6}\n",
                    m.covering, m.pri, m.voi
                ));
            }
        }
        std::fs::write(csv_path, text).map_err(|e| Error::io(csv_path, e))?;
    }

    println!("images: {}", table.len());
    let scale_note = |idx: usize| -> String {
        if args.soft {
            format!(" (scale {})", scales[report.ods_scale[idx]])
        } else {
            String::new()
        }
    };
    println!(
        "Covering  ODS {:.4}{}  OIS {:.4}",
        report.ods.covering,
        scale_note(0),
        report.ois.covering
    );
    println!(
        "PRI       ODS {:.4}{}  OIS {:.4}",
        report.ods.pri,
        scale_note(1),
        report.ois.pri
    );
    println!(
        "VoI       ODS {:.4}{}  OIS {:.4}",
        report.ods.voi,
        scale_note(2),
        report.ois.voi
    );
    Ok(())
}

fn is_image_file(path: &Path) -> bool {
    matches!(
        path.extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref(),
        Some("png" | "jpg" | "jpeg" | "ppm")
    )
}

struct PhaseStats {
    min: f64,
    max: f64,
    mean: f64,
    var: f64,
}

fn stats(values: &[f64]) -> PhaseStats {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    PhaseStats {
        min: values.iter().cloned().fold(f64::INFINITY, f64::min),
        max: values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        mean,
        var,
    }
}

pub fn bench(args: &BenchArgs) -> CliResult<()> {
    let images: Vec<PathBuf> = list_dir(&args.images)?
        .into_iter()
        .filter(|p| is_image_file(p))
        .collect();
    if images.is_empty() {
        return Err(CliError::Input(format!(
            "no images in {}",
            args.images.display()
        )));
    }
    let cfg = load_config(args.config.as_ref())?;
    let source = RegionSource::Internal {
        target_n: args.target_n,
    };

    // Sequential on purpose: parallel runs would contend and distort the
    // per-phase clocks.
    let mut timings: Vec<PhaseTimings> = Vec::with_capacity(images.len());
    for path in &images {
        let img = load_image::<f64>(path)?;
        let out = run_pipeline(&img, &cfg, &source, args.seed)?;
        log::info!("{}: total {:.3}s", path.display(), out.phases.total);
        timings.push(out.phases);
    }

    let rows: [(&str, Vec<f64>); 4] = [
        (
            PHASE_REGION,
            timings.iter().map(|t| t.region_structure).collect(),
        ),
        (
            PHASE_GRAPH,
            timings.iter().map(|t| t.graph_partition).collect(),
        ),
        (PHASE_MULTI, timings.iter().map(|t| t.multiclass).collect()),
        (PHASE_TOTAL, timings.iter().map(|t| t.total).collect()),
    ];

    println!("images: {}", images.len());
    println!("{:<34} {:>8} {:>8} {:>8} {:>9}", "Phase", "Min", "Max", "Mean", "Var");
    let mut json = BTreeMap::new();
    for (i, (name, values)) in rows.iter().enumerate() {
        let s = stats(values);
        let label = if i < 3 {
            format!("{}: {name}", i + 1)
        } else {
            (*name).to_string()
        };
        println!(
            "{label:<34} {:>8.3} {:>8.3} {:>8.3} {:>9.4}",
            s.min, s.max, s.mean, s.var
        );
        let mut entry = BTreeMap::new();
        entry.insert("min", s.min);
        entry.insert("max", s.max);
        entry.insert("mean", s.mean);
        entry.insert("var", s.var);
        json.insert((*name).to_string(), entry);
    }

    if let Some(path) = &args.out {
        let text = serde_json::to_string_pretty(&json)
            .map_err(|e| CliError::Input(format!("timing serialization failed: {e}")))?;
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(text.as_bytes())
            .map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
