//! The six commands behind the binary. Per-vehicle work runs on the shared
//! thread pool with seeds derived from the vehicle id, so results never
//! depend on scheduling.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use carfit::energy::{EnergyParams, ModelVariant};
use carfit::metrics::{self, EvalRecord};
use carfit::observer::{synthesize_world, NoiseSpec, VehicleTruth, VisibilityLut, WorldSpec};
use carfit::scene::{
    fit_ground_plane, FreeSpaceGrid, GridExtent, GroundPlane, PointLabel, RansacParams, SceneData,
    DEFAULT_CELL_SIZE_M,
};
use carfit::shape_model::{
    learn_asm as learn_model, place, points_to_vector, synthetic, DeformableVehicleModel,
    KeypointSet, Topology,
};
use carfit::smc::{self, SmcConfig};
use carfit::types::Side;
use carfit::{StereoRig, VehicleState, VehicleType};
use clap::Args;
use nalgebra::{DVector, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::artifacts::{self, FitRow, TruthRow};
use crate::config::{RunConfig, UsageError};

/// Camera height above the street used for generated scenes.
const CAMERA_HEIGHT_M: f64 = 1.65;
/// Visibility table resolution in degrees of viewpoint.
const LUT_STEP_DEG: f64 = 1.0;

#[derive(Args)]
pub struct GenTrainArgs {
    /// Output directory for the keypoint sets and the topology.
    #[arg(long)]
    pub out: PathBuf,
    /// Seed of the sampled shape variation.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn gen_train(args: GenTrainArgs) -> Result<()> {
    let (samples, topology) = synthetic::family_samples(args.seed);
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    topology.write(&args.out.join("topology.txt"))?;
    for (i, sample) in samples.iter().enumerate() {
        let name = format!("{}_{i:03}.kps", sample.type_label.name());
        sample.write(&args.out.join(name))?;
    }
    println!(
        "wrote {} keypoint sets and topology.txt to {}",
        samples.len(),
        args.out.display()
    );
    Ok(())
}

#[derive(Args)]
pub struct LearnAsmArgs {
    /// Directory of `.kps` training files.
    #[arg(long)]
    pub train_dir: PathBuf,
    /// Topology file; defaults to topology.txt inside the training directory.
    #[arg(long)]
    pub topology: Option<PathBuf>,
    /// Number of deformation components kept active for fitting.
    #[arg(long, default_value_t = 3)]
    pub n_keep: usize,
    /// Output model bundle.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn learn_asm(args: LearnAsmArgs) -> Result<()> {
    let mut paths: Vec<PathBuf> = fs::read_dir(&args.train_dir)
        .with_context(|| format!("reading {}", args.train_dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "kps"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no .kps files in {}", args.train_dir.display());
    }
    let samples: Vec<KeypointSet> = paths
        .iter()
        .map(|p| KeypointSet::read(p).map_err(anyhow::Error::new))
        .collect::<Result<_>>()?;
    let topology_path = args
        .topology
        .unwrap_or_else(|| args.train_dir.join("topology.txt"));
    let topology = Topology::read(&topology_path)?;
    let model = learn_model(&samples, args.n_keep, topology)?;

    println!(
        "learned {} keypoints, {} stored components, {} active",
        model.keypoint_count,
        model.n_components(),
        model.n_active
    );
    println!("{:<13} {:>7}  {}", "type", "samples", "mode rms [m]");
    for t in VehicleType::ALL {
        let members: Vec<&KeypointSet> = samples.iter().filter(|s| s.type_label == t).collect();
        let Some(gamma) = model.mode_gamma(t) else {
            continue;
        };
        let mut mean: DVector<f64> = DVector::zeros(model.mean.len());
        for s in &members {
            mean += s.to_vector();
        }
        mean /= members.len() as f64;
        let synth = points_to_vector(&model.synthesize(&gamma)?);
        let rms = (mean - synth).norm() / (model.keypoint_count as f64).sqrt();
        println!("{:<13} {:>7}  {rms:.4}", t.name(), members.len());
    }
    model.write_bundle(&args.out)?;
    println!("model bundle written to {}", args.out.display());
    Ok(())
}

#[derive(Args)]
pub struct GenSceneArgs {
    /// Learned model bundle.
    #[arg(long)]
    pub model: PathBuf,
    /// Output scene directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of vehicles placed in the scene.
    #[arg(long, default_value_t = 4)]
    pub vehicles: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Flat key=value file supplying defaults for the flags below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Disparity noise in pixels.
    #[arg(long)]
    pub noise_sigma_disp: Option<f64>,
    /// Viewpoint distribution spread in degrees.
    #[arg(long)]
    pub noise_view_sigma: Option<f64>,
    /// Probability mass on wrong vehicle types.
    #[arg(long)]
    pub noise_type_eps: Option<f64>,
    /// Stereo surface samples per vehicle.
    #[arg(long)]
    pub noise_surface_points: Option<usize>,
    /// Detection box padding as a fraction of the tight box.
    #[arg(long)]
    pub noise_box_pad: Option<f64>,
}

fn resolve_noise(cfg: &RunConfig, args: &GenSceneArgs) -> Result<NoiseSpec> {
    let d = NoiseSpec::default();
    Ok(NoiseSpec {
        sigma_disp_px: cfg.resolve(args.noise_sigma_disp, "noise-sigma-disp", d.sigma_disp_px)?,
        view_sigma_deg: cfg.resolve(args.noise_view_sigma, "noise-view-sigma", d.view_sigma_deg)?,
        type_eps: cfg.resolve(args.noise_type_eps, "noise-type-eps", d.type_eps)?,
        surface_points: cfg.resolve(
            args.noise_surface_points,
            "noise-surface-points",
            d.surface_points,
        )?,
        box_pad: cfg.resolve(args.noise_box_pad, "noise-box-pad", d.box_pad)?,
        ..d
    })
}

pub fn gen_scene(args: GenSceneArgs) -> Result<()> {
    let cfg = RunConfig::load(args.config.as_deref())?;
    let seed: u64 = cfg.resolve(args.seed, "seed", 0)?;
    let noise = resolve_noise(&cfg, &args)?;
    let model = DeformableVehicleModel::read_bundle(&args.model)?;
    let plane = GroundPlane::level(CAMERA_HEIGHT_M);
    let frame = plane.frame();
    let rig = StereoRig::street_default();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut truths: Vec<VehicleTruth> = Vec::new();
    for id in 0..args.vehicles {
        let vtype = VehicleType::ALL[rng.random_range(0..VehicleType::COUNT)];
        let mut gamma = model
            .mode_gamma(vtype)
            .with_context(|| format!("model has no shape target for {}", vtype.name()))?;
        for g in &mut gamma {
            *g += rng.random_range(-0.5..0.5);
        }
        // Rejection placement: inside the shared field of view, clear of
        // the vehicles already placed.
        let mut t = None;
        for _ in 0..500 {
            let cand: Vector2<f64> =
                Vector2::new(rng.random_range(7.0..22.0), rng.random_range(-5.0..5.0));
            let in_view = cand.y.abs() < 0.42 * cand.x;
            let clear = truths.iter().all(|o| (o.state.t - cand).norm() > 6.0);
            if in_view && clear {
                t = Some(cand);
                break;
            }
        }
        let Some(t) = t else {
            bail!("no overlap-free spot for vehicle {id}; the patch fits fewer vehicles");
        };
        let theta = rng.random_range(0.0..360.0);
        truths.push(VehicleTruth {
            vtype,
            state: VehicleState::new(t, theta, gamma),
        });
    }

    let (scene, bundles) = synthesize_world(
        &model,
        &truths,
        &frame,
        &rig,
        &noise,
        &WorldSpec::default(),
        &mut rng,
    )?;

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    scene.write(&args.out.join("scene.txt"))?;
    artifacts::write_plane(&args.out.join("plane.txt"), &plane)?;
    let grid = FreeSpaceGrid::build(
        &frame,
        &scene.labelled(PointLabel::Ground),
        &scene.labelled(PointLabel::Object),
        DEFAULT_CELL_SIZE_M,
        GridExtent::Auto,
    )?;
    fs::write(args.out.join("grid.csv"), grid.to_csv())?;
    let rows: Vec<TruthRow> = truths
        .iter()
        .enumerate()
        .map(|(id, tr)| TruthRow {
            id,
            vtype: tr.vtype,
            state: tr.state.clone(),
        })
        .collect();
    artifacts::write_truth(&args.out.join("truth.csv"), &rows, model.n_active)?;
    for (id, bundle) in bundles.iter().enumerate() {
        artifacts::write_bundle(&artifacts::bundle_dir(&args.out, id), bundle)?;
    }
    println!(
        "scene with {} vehicles written to {}",
        truths.len(),
        args.out.display()
    );
    Ok(())
}

#[derive(Args)]
pub struct FitArgs {
    /// Learned model bundle.
    #[arg(long)]
    pub model: PathBuf,
    /// Scene directory produced by gen-scene.
    #[arg(long)]
    pub scene: PathBuf,
    /// Output table of fitted states.
    #[arg(long)]
    pub out: PathBuf,
    /// Energy variant: base, base-s, base-s-p-o, base-k-w or full.
    #[arg(long)]
    pub variant: Option<ModelVariant>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Particles per round.
    #[arg(long)]
    pub np: Option<usize>,
    /// Refinement rounds after the initial population.
    #[arg(long)]
    pub nit: Option<usize>,
    /// Best particles surviving into each round.
    #[arg(long)]
    pub nb: Option<usize>,
    /// Perturbation radius decay per round.
    #[arg(long)]
    pub shrink: Option<f64>,
    /// Disparity noise the energy should assume, in pixels.
    #[arg(long)]
    pub noise_sigma_disp: Option<f64>,
    /// Optional per-round trace table, one row per refinement round.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// The stored true plane when the scene has one, otherwise a RANSAC
/// estimate from the full point cloud.
fn scene_plane(scene_dir: &Path, scene: &SceneData, seed: u64) -> Result<GroundPlane> {
    let stored = scene_dir.join("plane.txt");
    if stored.exists() {
        return artifacts::read_plane(&stored);
    }
    let points: Vec<_> = scene.points.iter().map(|(p, _)| *p).collect();
    let params = RansacParams {
        seed,
        ..RansacParams::default()
    };
    let (plane, _, _) = fit_ground_plane(&points, &params)?;
    Ok(plane)
}

/// Vehicle ids found under `obs/`, sorted. An absent directory is an empty
/// scene, not an error.
fn scene_vehicle_ids(scene_dir: &Path) -> Result<Vec<usize>> {
    let root = scene_dir.join("obs");
    if !root.exists() {
        return Ok(Vec::new());
    }
    let mut ids = Vec::new();
    for entry in fs::read_dir(&root).with_context(|| format!("reading {}", root.display()))? {
        let name = entry?.file_name();
        let name = name.to_string_lossy();
        let Some(digits) = name.strip_prefix('v') else {
            bail!("unexpected entry {name:?} under obs/");
        };
        ids.push(digits.parse().with_context(|| format!("bad vehicle directory {name:?}"))?);
    }
    ids.sort_unstable();
    Ok(ids)
}

pub fn fit(args: FitArgs) -> Result<()> {
    let cfg = RunConfig::load(args.config.as_deref())?;
    let variant = cfg.resolve(args.variant, "variant", ModelVariant::Full)?;
    let seed: u64 = cfg.resolve(args.seed, "seed", 0)?;
    let d = SmcConfig::default();
    let smc_config = SmcConfig {
        particles: cfg.resolve(args.np, "np", d.particles)?,
        iterations: cfg.resolve(args.nit, "nit", d.iterations)?,
        survivors: cfg.resolve(args.nb, "nb", d.survivors)?,
        shrink: cfg.resolve(args.shrink, "shrink", d.shrink)?,
        ..d
    };
    smc_config
        .validate()
        .map_err(|e| UsageError(e.to_string()))?;
    let params = EnergyParams {
        sigma_disp_px: cfg.resolve(
            args.noise_sigma_disp,
            "noise-sigma-disp",
            EnergyParams::default().sigma_disp_px,
        )?,
        ..EnergyParams::default()
    };

    let model = DeformableVehicleModel::read_bundle(&args.model)?;
    let lut = VisibilityLut::build(&model, LUT_STEP_DEG)?;
    let scene = SceneData::read(&args.scene.join("scene.txt"))?;
    let rig = scene.rig;
    let frame = scene_plane(&args.scene, &scene, seed)?.frame();
    let grid = FreeSpaceGrid::build(
        &frame,
        &scene.labelled(PointLabel::Ground),
        &scene.labelled(PointLabel::Object),
        DEFAULT_CELL_SIZE_M,
        GridExtent::Auto,
    )?;

    let ids = scene_vehicle_ids(&args.scene)?;
    let start = Instant::now();
    let fitted: Vec<(FitRow, Vec<String>)> = ids
        .par_iter()
        .map(|&id| {
            let bundle = artifacts::read_bundle(&artifacts::bundle_dir(&args.scene, id))?;
            let config = SmcConfig {
                rng_seed: seed.wrapping_add(id as u64),
                ..smc_config.clone()
            };
            let result = smc::fit(
                &model, &lut, &bundle, &frame, &rig, Some(&grid), variant, params, &config,
            )?;
            let r = &result.report;
            let row = FitRow {
                id,
                variant,
                state: result.state.clone(),
                energy: [
                    r.points,
                    r.keypoints,
                    r.wireframe,
                    r.position,
                    r.orientation,
                    r.shape,
                    r.total,
                ],
                evaluations: result.evaluations,
            };
            // One row per refinement round; the seed population is round 0
            // of the trace and stays internal.
            let trace: Vec<String> = result
                .trace
                .iter()
                .filter(|t| t.iteration > 0)
                .map(|t| {
                    format!(
                        "{id},{},{},{},{},{},{},{},{}\n",
                        t.iteration,
                        t.report.points,
                        t.report.keypoints,
                        t.report.wireframe,
                        t.report.position,
                        t.report.orientation,
                        t.report.shape,
                        t.report.total
                    )
                })
                .collect();
            Ok((row, trace))
        })
        .collect::<Result<_>>()?;

    let rows: Vec<FitRow> = fitted.iter().map(|(row, _)| row.clone()).collect();
    artifacts::write_fits(&args.out, &rows, model.n_active)?;
    if let Some(trace_path) = &args.trace {
        let mut text =
            String::from("id,round,e_points,e_keypoints,e_wireframe,e_position,e_orientation,e_shape,e_total\n");
        for (_, lines) in &fitted {
            for line in lines {
                text.push_str(line);
            }
        }
        fs::write(trace_path, text).with_context(|| format!("writing {}", trace_path.display()))?;
    }
    println!(
        "fitted {} vehicles with the {} variant in {:.1} s",
        rows.len(),
        variant.name(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

#[derive(Args)]
pub struct EvalArgs {
    /// Learned model bundle (for keypoint-space errors).
    #[arg(long)]
    pub model: PathBuf,
    /// Fitted states table.
    #[arg(long)]
    pub fits: PathBuf,
    /// Ground-truth table.
    #[arg(long)]
    pub truth: PathBuf,
    /// Scene directory; supplies the ground plane when given.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Output per-vehicle metrics table.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let model = DeformableVehicleModel::read_bundle(&args.model)?;
    let truth = artifacts::read_truth(&args.truth)?;
    let fits = artifacts::read_fits(&args.fits)?;
    let frame = match &args.scene {
        Some(dir) => artifacts::read_plane(&dir.join("plane.txt"))?.frame(),
        None => GroundPlane::level(CAMERA_HEIGHT_M).frame(),
    };

    let mut records: Vec<(usize, EvalRecord)> = Vec::with_capacity(fits.len());
    for fit in &fits {
        let truth_row = truth
            .iter()
            .find(|t| t.id == fit.id)
            .with_context(|| format!("fit {} has no ground-truth row", fit.id))?;
        let record = metrics::evaluate_fit(&model, &truth_row.state, &fit.state, &frame)?;
        records.push((fit.id, record));
    }

    let mut text =
        String::from("id,translation_m,longitudinal_m,lateral_m,heading_deg,keypoint_rms_m\n");
    for (id, r) in &records {
        text.push_str(&format!(
            "{id},{},{},{},{},{}\n",
            r.translation_m, r.longitudinal_m, r.lateral_m, r.heading_deg, r.keypoint_rms_m
        ));
    }
    fs::write(&args.out, text).with_context(|| format!("writing {}", args.out.display()))?;

    let bare: Vec<EvalRecord> = records.iter().map(|(_, r)| *r).collect();
    let shares = metrics::accuracy_shares(&bare)?;
    let translations: Vec<f64> = bare.iter().map(|r| r.translation_m).collect();
    let headings: Vec<f64> = bare.iter().map(|r| r.heading_deg).collect();
    let t_stats = metrics::robust_stats(&translations)?;
    let h_stats = metrics::robust_stats(&headings)?;
    println!("vehicles evaluated: {}", bare.len());
    println!("t<0.25m,t<0.50m,t<0.75m,heading<5,heading<10,heading<22.5");
    println!(
        "{:.1},{:.1},{:.1},{:.1},{:.1},{:.1}",
        shares.translation_025,
        shares.translation_050,
        shares.translation_075,
        shares.heading_5,
        shares.heading_10,
        shares.heading_22_5
    );
    println!(
        "translation median {:.3} m (sigma_mad {:.3}), heading median {:.2} deg (sigma_mad {:.2})",
        t_stats.median, t_stats.sigma_mad, h_stats.median, h_stats.sigma_mad
    );
    println!(
        "aggregate keypoint rms {:.3} m",
        metrics::aggregate_keypoint_rms(&bare)?
    );
    println!("metrics written to {}", args.out.display());
    Ok(())
}

#[derive(Args)]
pub struct ExportArgs {
    /// Learned model bundle.
    #[arg(long)]
    pub model: PathBuf,
    /// Scene directory the fits belong to.
    #[arg(long)]
    pub scene: PathBuf,
    /// Fitted states table.
    #[arg(long)]
    pub fits: PathBuf,
    /// Vehicle id to export.
    #[arg(long, default_value_t = 0)]
    pub vehicle: usize,
    /// Output directory for model.obj and overlay.ppm.
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Draws a line into a packed RGB image, skipping out-of-image samples.
fn draw_image_line(
    rgb: &mut [u8],
    width: u32,
    height: u32,
    a: (f64, f64),
    b: (f64, f64),
    color: [u8; 3],
) {
    let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
    let steps = ((len * 2.0).ceil() as usize).clamp(1, 8192);
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let x = a.0 + (b.0 - a.0) * t;
        let y = a.1 + (b.1 - a.1) * t;
        if x < 0.0 || y < 0.0 || x >= width as f64 || y >= height as f64 {
            continue;
        }
        let idx = ((y as u32 * width + x as u32) * 3) as usize;
        rgb[idx..idx + 3].copy_from_slice(&color);
    }
}

pub fn export(args: ExportArgs) -> Result<()> {
    let model = DeformableVehicleModel::read_bundle(&args.model)?;
    let fits = artifacts::read_fits(&args.fits)?;
    let row = fits
        .iter()
        .find(|f| f.id == args.vehicle)
        .with_context(|| format!("no fit for vehicle {}", args.vehicle))?;
    let scene = SceneData::read(&args.scene.join("scene.txt"))?;
    let rig = scene.rig;
    let frame = scene_plane(&args.scene, &scene, 0)?.frame();

    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    let mesh = model.surface_mesh(&row.state.gamma)?;
    artifacts::write_obj(&args.out_dir.join("model.obj"), &mesh)?;

    let (w, h) = (rig.width, rig.height);
    let mut rgb = vec![0u8; (w * h * 3) as usize];
    // Scene points as a dim backdrop.
    for (p, _) in &scene.points {
        if p.z <= 0.0 {
            continue;
        }
        if let Some((u, v)) = rig.project_left(p) {
            if rig.in_image(u, v) {
                let idx = ((v as u32 * w + u as u32) * 3) as usize;
                rgb[idx..idx + 3].copy_from_slice(&[90, 90, 90]);
            }
        }
    }
    // Fitted wireframe on top, one color per vehicle side.
    let placed = place(&model.synthesize(&row.state.gamma)?, &row.state, &frame);
    let colors = [
        [255u8, 80, 80],
        [80, 80, 255],
        [80, 255, 80],
        [255, 255, 80],
    ];
    for side in Side::ALL {
        for edge in &model.topology.wireframe[side.index()] {
            let a = placed[edge[0] as usize];
            let b = placed[edge[1] as usize];
            if a.z <= 0.1 || b.z <= 0.1 {
                continue;
            }
            let (Some(ua), Some(ub)) = (rig.project_left(&a), rig.project_left(&b)) else {
                continue;
            };
            draw_image_line(&mut rgb, w, h, ua, ub, colors[side.index()]);
        }
    }
    artifacts::write_ppm(&args.out_dir.join("overlay.ppm"), w, h, &rgb)?;
    println!(
        "model.obj and overlay.ppm for vehicle {} written to {}",
        args.vehicle,
        args.out_dir.display()
    );
    Ok(())
}
