//! One handler per subcommand. Each validates its inputs before any write,
//! and stops there under `--dry-run`.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use log::info;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};
use voxsr::gap::{domain_gap_experiment, GapConfig};
use voxsr::intensity::match_volume;
use voxsr::io::{read_raw, read_slice_stack};
use voxsr::linear_sr::RidgeAccumulator;
use voxsr::metrics::{evaluate_volume, mean_tv, radial_power_profile, Plane};
use voxsr::phantom::{degrade_downsample, degrade_realistic, generate, DegradeSpec, PhantomSpec};
use voxsr::pyramid::build_pyramid;
use voxsr::registration::{
    crop_and_mask, register_affine, register_translation, resample_affine, AffineOptions, Grid, TransformRecord,
    TranslationOptions,
};
use voxsr::sampler::{dump_pairs, sample_stream_single, AugmentConfig, LevelRef, SamplerConfig};
use voxsr::store::{write_store, StoreOptions};
use voxsr::tiled::{record_predictions, tiled_apply, ReplayOperator, SrOperator, TileOptions, Upsampler};
use voxsr::volume::{clip_normalize, threshold_mask, SplitOptions};
use voxsr::{Dims, Error, Group, LinearSr, Result, Volume};

use crate::files::{
    check_output, emit, fresh_dir, io_err, is_sidecar, load_volume, open_store, print_line, require_input, save_volume,
};
use crate::{
    EvalArgs, GapArgs, Globals, IngestArgs, LrKind, MatchArgs, PackArgs, PhantomArgs, PyramidArgs, RegisterArgs,
    SampleArgs, SpectrumArgs, SrApplyArgs, SrFitArgs, SrReplayArgs, TvArgs,
};

fn required_out(g: &Globals) -> Result<&Path> {
    g.out
        .as_deref()
        .ok_or_else(|| Error::Config("this stage needs --out".into()))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    require_input(path)?;
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn pretty<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)?)
}

fn print_plan(stage: &str, plan: Value) -> Result<()> {
    print_line(&pretty(&json!({ "stage": stage, "dry_run": true, "plan": plan }))?)
}

/// Sidecar outputs are checked up front; store groups are checked by the writer.
fn check_volume_output(path: &Path, overwrite: bool) -> Result<()> {
    if is_sidecar(path) {
        check_output(path, overwrite)
    } else {
        Ok(())
    }
}

fn store_options(group: Group, chunk: Option<usize>, compression: Option<u32>, overwrite: bool) -> Result<StoreOptions> {
    if chunk == Some(0) {
        return Err(Error::Config("chunk side must be positive".into()));
    }
    Ok(StoreOptions {
        chunk: chunk.map(Dims::cube).unwrap_or(group.default_chunk()),
        overwrite,
        compression,
    })
}

/// HR pyramid level whose grid matches LR at `scale`.
fn level_for_scale(scale: usize) -> Result<usize> {
    match scale {
        2 | 4 | 8 => Ok(scale.trailing_zeros() as usize),
        _ => Err(Error::Config(format!("scale must be 2, 4 or 8, got {scale}"))),
    }
}

pub fn ingest(g: &Globals, a: IngestArgs) -> Result<()> {
    require_input(&a.input)?;
    let out = required_out(g)?;
    if !(0.0 <= a.p_low && a.p_low < a.p_high && a.p_high <= 100.0) {
        return Err(Error::Config(format!(
            "percentiles must satisfy 0 <= low < high <= 100, got ({}, {})",
            a.p_low, a.p_high
        )));
    }
    check_volume_output(out, g.overwrite)?;
    if g.dry_run {
        return print_plan("ingest", json!({ "args": a, "out": out }));
    }
    let raw = if a.input.is_dir() {
        read_slice_stack(&a.input, a.spacing)?
    } else {
        read_raw(&a.input)?
    };
    let mut vol = clip_normalize(&raw, a.p_low, a.p_high)?;
    if let Some(t) = a.threshold {
        vol = threshold_mask(&vol, t);
    }
    save_volume(out, &vol, a.group, g.overwrite)?;
    info!("ingest: {} at {:?} um -> {}", vol.dims(), vol.spacing(), out.display());
    Ok(())
}

fn write_levels(g: &Globals, out: &Path, group: Group, levels: &[Volume], opts: &StoreOptions) -> Result<()> {
    write_store(out, group, levels, opts)?;
    info!(
        "{group}: {} levels from {} -> {}",
        levels.len(),
        levels[0].dims(),
        out.display()
    );
    let dims: Vec<Dims> = levels.iter().map(|l| l.dims()).collect();
    emit(None, &serde_json::to_string(&json!({ "group": group, "levels": dims }))?, g.overwrite)
}

pub fn pyramid(g: &Globals, a: PyramidArgs) -> Result<()> {
    require_input(&a.input)?;
    let out = required_out(g)?;
    let opts = store_options(a.group, a.chunk, a.compression, g.overwrite)?;
    if !a.max_factor.is_power_of_two() || a.max_factor > 8 {
        return Err(Error::Config(format!("max factor must be 1, 2, 4 or 8, got {}", a.max_factor)));
    }
    if g.dry_run {
        return print_plan("pyramid", json!({ "args": a, "out": out }));
    }
    let vol = load_volume(&a.input, a.input_group, 0)?;
    let levels = build_pyramid(&vol, a.max_factor)?;
    write_levels(g, out, a.group, &levels, &opts)
}

pub fn pack(g: &Globals, a: PackArgs) -> Result<()> {
    require_input(&a.input)?;
    let out = required_out(g)?;
    let opts = store_options(a.group, a.chunk, a.compression, g.overwrite)?;
    if g.dry_run {
        return print_plan("pack", json!({ "args": a, "out": out }));
    }
    let vol = load_volume(&a.input, Group::Hr, 0)?;
    write_levels(g, out, a.group, &[vol], &opts)
}

pub fn register(g: &Globals, a: RegisterArgs) -> Result<()> {
    let store = open_store(&a.store)?;
    let level = level_for_scale(a.scale)?;
    store.level(Group::Hr, level)?;
    store.level(Group::Lr, 0)?;
    if g.dry_run {
        return print_plan("register", json!({ "args": a, "fixed": ["HR", level], "moving": ["LR", 0] }));
    }
    let fixed = store.read_level(Group::Hr, level)?;
    let moving = store.read_level(Group::Lr, 0)?;
    let topts = TranslationOptions {
        search_radius: a.search_radius,
        ..TranslationOptions::default()
    };
    let coarse = register_translation(&fixed, &moving, &topts)?;
    info!("register: translation {:?} um, NCC {:.4}", coarse.transform.translation, coarse.ncc_final);
    let reg = if a.translation_only {
        coarse
    } else {
        register_affine(&fixed, &moving, &coarse.transform, &AffineOptions::default())?
    };
    info!("register: final NCC {:.4}", reg.ncc_final);
    let resampled = resample_affine(&moving, &reg.transform, &Grid::of(&fixed));
    let registered = crop_and_mask(&resampled, [0; 3], fixed.dims())?;
    save_volume(&a.store, &registered, Group::Reg, g.overwrite)?;
    let record = TransformRecord::new(&reg, fixed.spacing(), moving.spacing());
    emit(g.out.as_deref(), &pretty(&record)?, g.overwrite)
}

pub fn match_intensities(g: &Globals, a: MatchArgs) -> Result<()> {
    let store = open_store(&a.store)?;
    let level = level_for_scale(a.scale)?;
    store.level(Group::Hr, level)?;
    store.level(Group::Reg, 0)?;
    let target = g.out.clone().unwrap_or_else(|| a.store.clone());
    if g.dry_run {
        return print_plan("match", json!({ "args": a, "out": target }));
    }
    // Registration zeroes everything outside the field of view.
    let reg = threshold_mask(&store.read_level(Group::Reg, 0)?, 1);
    let down = store.read_level(Group::Hr, level)?;
    let matched = match_volume(&reg, &down)?.without_mask();
    let in_place = target == a.store;
    drop(store);
    save_volume(&target, &matched, Group::Reg, g.overwrite || in_place)?;
    info!("match: {} slices -> {}", matched.dims().z, target.display());
    Ok(())
}

pub fn sample(g: &Globals, a: SampleArgs) -> Result<()> {
    let store = Arc::new(open_store(&a.store)?);
    let out = required_out(g)?;
    let cfg = SamplerConfig {
        workers: a.workers,
        threads_per_worker: a.threads_per_worker,
        queue_capacity: a.queue_capacity,
        seed: g.seed.unwrap_or(0),
        scale: a.scale,
        lr_patch: a.lr_patch,
        lr_source: LevelRef::new(a.lr_group, a.lr_level),
        hr_source: LevelRef::new(Group::Hr, a.hr_level),
        augment: if a.no_augment { AugmentConfig::none() } else { AugmentConfig::default() },
        fg_floor: a.fg_floor,
        split: SplitOptions {
            test_fraction: a.test_fraction,
            ..SplitOptions::default()
        },
        role: a.role.into(),
        count: Some(a.count),
        ..SamplerConfig::default()
    };
    // Plan validation without drawing anything.
    sample_stream_single(Arc::clone(&store), &SamplerConfig { count: Some(0), ..cfg.clone() })?;
    check_output(out, g.overwrite)?;
    if g.dry_run {
        return print_plan("sample", json!({ "sampler": cfg, "out": out }));
    }
    fresh_dir(out, g.overwrite)?;
    let index = dump_pairs(sample_stream_single(store, &cfg)?, out)?;
    info!("sample: {} pairs -> {}", index.len(), out.display());
    emit(None, &serde_json::to_string(&json!({ "pairs": index.len(), "dir": out }))?, g.overwrite)
}

pub fn sr_fit(g: &Globals, a: SrFitArgs) -> Result<()> {
    let store = Arc::new(open_store(&a.store)?);
    let out = required_out(g)?;
    let cfg = SamplerConfig {
        seed: g.seed.unwrap_or(0),
        scale: a.scale,
        lr_patch: a.lr_patch,
        lr_source: LevelRef::new(a.lr_group, 0),
        hr_source: LevelRef::new(Group::Hr, 0),
        augment: if a.augment { AugmentConfig::default() } else { AugmentConfig::none() },
        split: SplitOptions {
            test_fraction: a.test_fraction,
            ..SplitOptions::default()
        },
        count: Some(a.pairs),
        ..SamplerConfig::default()
    };
    sample_stream_single(Arc::clone(&store), &SamplerConfig { count: Some(0), ..cfg.clone() })?;
    let mut acc = RidgeAccumulator::<f64>::new(a.scale, a.k)?;
    if !(a.lambda >= 0.0) {
        return Err(Error::Config(format!("lambda must be non-negative, got {}", a.lambda)));
    }
    check_output(out, g.overwrite)?;
    if g.dry_run {
        return print_plan("sr-fit", json!({ "args": a, "sampler": cfg, "out": out }));
    }
    for pair in sample_stream_single(store, &cfg)? {
        let p = pair?;
        acc.add(&p.lr, &p.hr)?;
    }
    let model = acc.solve(a.lambda)?;
    info!("sr fit: {} rows, s={} k={} lambda={}", acc.rows(), a.scale, a.k, a.lambda);
    emit(Some(out), &pretty(&model)?, g.overwrite)
}

fn clamp_tile(tile: Dims, lr: Dims) -> Dims {
    Dims::new(tile.z.min(lr.z), tile.y.min(lr.y), tile.x.min(lr.x))
}

pub fn sr_apply(g: &Globals, a: SrApplyArgs) -> Result<()> {
    require_input(&a.input)?;
    let out = required_out(g)?;
    let op: Box<dyn SrOperator> = match &a.model {
        Some(path) => {
            let model: LinearSr = read_json(path)?;
            model.validate()?;
            Box::new(model)
        }
        None => {
            level_for_scale(a.scale)?;
            Box::new(Upsampler {
                kind: a.interp,
                scale: a.scale,
            })
        }
    };
    check_volume_output(out, g.overwrite)?;
    if let Some(dir) = &a.record {
        check_output(dir, g.overwrite)?;
    }
    if g.dry_run {
        return print_plan("sr-apply", json!({ "args": a, "scale": op.scale(), "out": out }));
    }
    let lr = load_volume(&a.input, a.group, a.level)?;
    let opts = TileOptions {
        tile: clamp_tile(a.tile, lr.dims()),
        overlap: a.overlap,
    };
    if let Some(dir) = &a.record {
        fresh_dir(dir, g.overwrite)?;
        let manifest = record_predictions(&lr, op.as_ref(), &opts, dir)?;
        info!("sr apply: recorded {} tiles in {}", manifest.entries.len(), dir.display());
    }
    let pred = tiled_apply(&lr, op.as_ref(), &opts)?;
    save_volume(out, &pred, Group::Hr, g.overwrite)?;
    info!("sr apply: {} -> {} at {}", lr.dims(), pred.dims(), out.display());
    Ok(())
}

pub fn sr_replay(g: &Globals, a: SrReplayArgs) -> Result<()> {
    require_input(&a.input)?;
    let out = required_out(g)?;
    let op = ReplayOperator::open(&a.replay)?;
    check_volume_output(out, g.overwrite)?;
    if g.dry_run {
        return print_plan("sr-replay", json!({ "args": a, "manifest": op.manifest(), "out": out }));
    }
    let lr = load_volume(&a.input, a.group, a.level)?;
    let pred = tiled_apply(&lr, &op, &op.tile_options())?;
    save_volume(out, &pred, Group::Hr, g.overwrite)
}

pub fn eval(g: &Globals, a: EvalArgs) -> Result<()> {
    require_input(&a.pred)?;
    require_input(&a.reference)?;
    if a.scale == 0 {
        return Err(Error::Config("scale must be positive".into()));
    }
    if g.dry_run {
        return print_plan("eval", json!({ "args": a, "out": g.out }));
    }
    let pred = load_volume(&a.pred, a.group, 0)?;
    let reference = load_volume(&a.reference, a.group, 0)?;
    let report = evaluate_volume(&pred, &reference, a.scale, a.mode)?;
    match g.out.as_deref() {
        None => emit(None, &report.row(), g.overwrite),
        Some(path) => {
            info!("eval: {} over {} slices", report.row(), report.included().len());
            let csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
            let text = if csv { report.to_csv() } else { report.to_json()? };
            emit(Some(path), &text, g.overwrite)
        }
    }
}

pub fn tv(g: &Globals, a: TvArgs) -> Result<()> {
    require_input(&a.input)?;
    if g.dry_run {
        return print_plan("tv", json!({ "args": a, "out": g.out }));
    }
    let vol = load_volume(&a.input, a.group, a.level)?;
    let value = mean_tv(&vol, a.scale, a.mode)?;
    let text = serde_json::to_string(&json!({ "tv": value, "scale": a.scale, "mode": a.mode }))?;
    emit(g.out.as_deref(), &text, g.overwrite)
}

pub fn spectrum(g: &Globals, a: SpectrumArgs) -> Result<()> {
    require_input(&a.input)?;
    if g.dry_run {
        return print_plan("spectrum", json!({ "args": a, "out": g.out }));
    }
    let vol = load_volume(&a.input, a.group, a.level)?;
    let d = vol.dims();
    let z = a.slice.unwrap_or(d.z / 2);
    if z >= d.z {
        return Err(Error::Range(format!("slice {z} outside depth {}", d.z)));
    }
    let plane = Plane::<f64>::from_u16(d.y, d.x, vol.slice(z))?;
    let profile = radial_power_profile(&plane, a.full)?;
    let text = pretty(&json!({ "slice": z, "profile": profile }))?;
    emit(g.out.as_deref(), &text, g.overwrite)
}

pub fn phantom(g: &Globals, a: PhantomArgs) -> Result<()> {
    let out = required_out(g)?;
    let mut spec: PhantomSpec = match &a.spec {
        Some(p) => read_json(p)?,
        None => PhantomSpec::default(),
    };
    if let Some(kind) = a.kind {
        spec.kind = kind;
    }
    if let Some(dims) = a.dims {
        spec.dims = dims;
    }
    let mut degrade: DegradeSpec = match &a.degrade {
        Some(p) => read_json(p)?,
        None => DegradeSpec::default(),
    };
    if let Some(s) = a.scale {
        degrade.scale = s;
    }
    if let Some(seed) = g.seed {
        spec.seed = seed;
        degrade.seed = seed;
    }
    spec.validate()?;
    if a.lr != LrKind::None {
        degrade.validate()?;
    }
    let hr_opts = store_options(Group::Hr, None, None, g.overwrite)?;
    if g.dry_run {
        return print_plan("phantom", json!({ "spec": spec, "lr": a.lr, "degrade": degrade, "out": out }));
    }
    let hr = generate(&spec)?.without_mask();
    let levels = build_pyramid(&hr, a.max_factor)?;
    write_store(out, Group::Hr, &levels, &hr_opts)?;
    let lr = match a.lr {
        LrKind::None => None,
        LrKind::Down => Some(degrade_downsample(&hr, degrade.scale)?),
        LrKind::Real => Some(degrade_realistic(&hr, &degrade)?),
    };
    if let Some(lr) = &lr {
        write_store(out, Group::Lr, std::slice::from_ref(lr), &store_options(Group::Lr, None, None, g.overwrite)?)?;
    }
    info!("phantom: {:?} {} seed {} -> {}", spec.kind, spec.dims, spec.seed, out.display());
    let summary = json!({
        "hr_levels": levels.iter().map(|l| l.dims()).collect::<Vec<_>>(),
        "lr": lr.as_ref().map(|v| v.dims()),
    });
    emit(None, &serde_json::to_string(&summary)?, g.overwrite)
}

pub fn gap(g: &Globals, a: GapArgs) -> Result<()> {
    let mut cfg = GapConfig::default();
    if let Some(p) = &a.phantom {
        cfg.phantom = read_json(p)?;
    }
    if let Some(p) = &a.degrade {
        cfg.degrade = read_json(p)?;
    }
    if let Some(s) = a.scale {
        cfg.degrade.scale = s;
    }
    cfg.k = a.k;
    cfg.lambda = a.lambda;
    cfg.n_train_pairs = a.pairs;
    cfg.lr_patch = a.lr_patch;
    cfg.overlap = a.overlap;
    if let Some(seed) = g.seed {
        cfg.seed = seed;
        cfg.phantom.seed = seed;
        cfg.degrade.seed = seed;
    }
    cfg.phantom.validate()?;
    cfg.degrade.validate()?;
    if g.dry_run {
        return print_plan("gap", serde_json::to_value(&cfg)?);
    }
    let report = domain_gap_experiment(&cfg)?;
    let c = &report.conditions;
    info!("gap: D/down {}  R/real {}", c.d_down.row(), c.r_real.row());
    info!("gap: D/real {}  R/down {}", c.d_real.row(), c.r_down.row());
    info!(
        "gap: in-domain {:+.2} dB, cross-domain drop {:+.2} dB, TV hr {:.4} D {:.4} R {:.4}",
        report.checks.in_domain_gap_db,
        report.checks.cross_domain_drop_db,
        report.tv.hr,
        report.tv.d_pred,
        report.tv.r_pred
    );
    emit(g.out.as_deref(), &pretty(&report)?, g.overwrite)
}
