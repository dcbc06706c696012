//! Stage-wise training: joint optimization of the dehazing subnetworks,
//! then refinement (content-only phase, then alternating adversarial phase),
//! plus deterministic logging and the ablation harness.
//!
//! Everything is a pure function of (seed, config, dataset): logs and
//! checkpoints are bit-identical across runs.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adam::{AdamConfig, AdamState};
use crate::error::{Error, Result};
use crate::eval::{mse_metric, ssim_metric, MseScale};
use crate::gradcheck::GradCheck;
use crate::haze::Sample;
use crate::loss::{adversarial_losses, d_total, mse_loss, rf_total, tp_total, ADV_WEIGHT};
use crate::net::{
    init_weights, pack_grads, pack_values, unpack_values, zero_grads, Checkpoint, CheckpointMeta,
    CoarseNet, DiscriminatorNet, FineNet, GeneratorNet, HazeRemovalNet, ParamVisit,
};
use crate::ssim::{ssim_loss, SsimConfig};
use crate::tensor::{split_channels, Tensor};

// Offsets carving independent ChaCha streams out of one user seed.
const STREAM_SHUFFLE: u64 = 0x9E37_79B9_7F4A_7C15;
const STREAM_REFINE_BATCH: u64 = 0x6A09_E667_F3BC_C908;
const STREAM_SPOT_CHECK: u64 = 0xBB67_AE85_84CA_A73B;

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub seed: u64,
    pub adam: AdamConfig,
    pub batch_size_dehaze: usize,
    pub batch_size_refine: usize,
    pub steps_dehaze: usize,
    pub refine_phase1_steps: usize,
    pub refine_phase2_steps: usize,
    pub height: usize,
    pub width: usize,
    pub ablation_no_transmission: bool,
    pub ssim: SsimConfig,
    pub adv_weight: f64,
    pub val_cadence: usize,
    pub checkpoint_cadence: usize,
    pub removal_blocks: usize,
    pub removal_layers_per_block: usize,
    pub removal_filters: usize,
    pub generator_layers: usize,
    pub generator_filters: usize,
    pub generator_skips: usize,
    pub phase1_early_stop_window: usize,
    pub phase1_early_stop_rel: f64,
}

impl Default for TrainConfig {
    /// Desk-scale defaults; the published setup (1299/150 scenes x 20 draws
    /// at 310x230, batches 16/8) stays reachable through the config file.
    fn default() -> Self {
        TrainConfig {
            seed: 42,
            adam: AdamConfig::default(),
            batch_size_dehaze: 4,
            batch_size_refine: 4,
            steps_dehaze: 2000,
            refine_phase1_steps: 500,
            refine_phase2_steps: 500,
            height: 48,
            width: 64,
            ablation_no_transmission: false,
            ssim: SsimConfig::default(),
            adv_weight: ADV_WEIGHT,
            val_cadence: 200,
            checkpoint_cadence: 500,
            removal_blocks: 3,
            removal_layers_per_block: 3,
            removal_filters: 32,
            generator_layers: 10,
            generator_filters: 32,
            generator_skips: 4,
            phase1_early_stop_window: 100,
            phase1_early_stop_rel: 0.001,
        }
    }
}

impl TrainConfig {
    /// Stable FNV-1a hash of every field, recorded in checkpoints so a
    /// checkpoint can be matched to the config that produced it.
    pub fn config_hash(&self) -> String {
        let canonical = format!(
            "seed={};lr={};b1={};b2={};eps={};bsd={};bsr={};steps={};p1={};p2={};h={};w={};abl={};\
             patch={};c1={};c2={};win={:?};adv={};valc={};ckptc={};rb={};rl={};rf={};gl={};gf={};gs={};esw={};esr={}",
            self.seed,
            self.adam.learning_rate,
            self.adam.beta1,
            self.adam.beta2,
            self.adam.epsilon,
            self.batch_size_dehaze,
            self.batch_size_refine,
            self.steps_dehaze,
            self.refine_phase1_steps,
            self.refine_phase2_steps,
            self.height,
            self.width,
            self.ablation_no_transmission,
            self.ssim.patch_size,
            self.ssim.c1,
            self.ssim.c2,
            self.ssim.window,
            self.adv_weight,
            self.val_cadence,
            self.checkpoint_cadence,
            self.removal_blocks,
            self.removal_layers_per_block,
            self.removal_filters,
            self.generator_layers,
            self.generator_filters,
            self.generator_skips,
            self.phase1_early_stop_window,
            self.phase1_early_stop_rel,
        );
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for b in canonical.as_bytes() {
            hash ^= *b as u64;
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{hash:016x}")
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValMetrics {
    pub mse: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub stage: String,
    pub step: u64,
    /// Loss components whose sum is `total`.
    pub losses: Vec<(String, f64)>,
    pub total: f64,
    /// Informational values outside the objective (discriminator loss,
    /// score means); serialized with an `x_` prefix.
    pub extras: Vec<(String, f64)>,
    pub val: Option<ValMetrics>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<StepRecord>,
    pub warnings: Vec<(u64, String)>,
    /// Wall-clock of the run; reported to the console but never serialized,
    /// so log files stay byte-identical across same-seed runs.
    pub wall_seconds: f64,
}

impl TrainLog {
    /// Line-delimited records: one `key=value` line per step, warnings
    /// interleaved where they occurred.
    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        let mut warn_iter = self.warnings.iter().peekable();
        for rec in &self.records {
            while let Some(&&(wstep, ref msg)) = warn_iter.peek() {
                if wstep <= rec.step {
                    out.push_str(&format!("warning step={wstep} msg={msg}\n"));
                    warn_iter.next();
                } else {
                    break;
                }
            }
            out.push_str(&format!("stage={} step={}", rec.stage, rec.step));
            for (k, v) in &rec.losses {
                out.push_str(&format!(" {k}={v}"));
            }
            out.push_str(&format!(" total={}", rec.total));
            for (k, v) in &rec.extras {
                out.push_str(&format!(" x_{k}={v}"));
            }
            if let Some(val) = &rec.val {
                out.push_str(&format!(" val_mse={} val_ssim={}", val.mse, val.ssim));
            }
            out.push('\n');
        }
        for (wstep, msg) in warn_iter {
            out.push_str(&format!("warning step={wstep} msg={msg}\n"));
        }
        out
    }

    /// Parses what `to_lines` wrote; `parse(to_lines())` round-trips exactly.
    pub fn parse(text: &str) -> Result<TrainLog> {
        let bad = |line: &str, why: &str| Error::InvalidValue {
            context: "TrainLog::parse",
            detail: format!("{why}: `{line}`"),
        };
        let mut log = TrainLog::default();
        for line in text.lines() {
            if line.is_empty() {
                continue;
            }
            let payload = match line.strip_prefix("warning ") {
                Some(rest) => rest,
                None => line,
            };
            let mut fields = Vec::new();
            for part in payload.split(' ') {
                let (k, v) = part
                    .split_once('=')
                    .ok_or_else(|| bad(line, "field without `=`"))?;
                fields.push((k, v));
            }
            if line.starts_with("warning ") {
                let step: u64 = fields
                    .iter()
                    .find(|(k, _)| *k == "step")
                    .ok_or_else(|| bad(line, "warning without step"))?
                    .1
                    .parse()
                    .map_err(|_| bad(line, "bad step"))?;
                let msg = fields
                    .iter()
                    .find(|(k, _)| *k == "msg")
                    .ok_or_else(|| bad(line, "warning without msg"))?
                    .1;
                log.warnings.push((step, msg.to_string()));
                continue;
            }
            let mut rec = StepRecord {
                stage: String::new(),
                step: 0,
                losses: Vec::new(),
                total: 0.0,
                extras: Vec::new(),
                val: None,
            };
            let mut val_mse = None;
            let mut val_ssim = None;
            for (k, v) in fields {
                match k {
                    "stage" => rec.stage = v.to_string(),
                    "step" => rec.step = v.parse().map_err(|_| bad(line, "bad step"))?,
                    "total" => rec.total = v.parse().map_err(|_| bad(line, "bad total"))?,
                    "val_mse" => val_mse = Some(v.parse().map_err(|_| bad(line, "bad val_mse"))?),
                    "val_ssim" => {
                        val_ssim = Some(v.parse().map_err(|_| bad(line, "bad val_ssim"))?)
                    }
                    _ if k.starts_with("x_") => {
                        rec.extras.push((
                            k[2..].to_string(),
                            v.parse().map_err(|_| bad(line, "bad extra"))?,
                        ));
                    }
                    _ => {
                        rec.losses
                            .push((k.to_string(), v.parse().map_err(|_| bad(line, "bad loss"))?));
                    }
                }
            }
            if let (Some(mse), Some(ssim)) = (val_mse, val_ssim) {
                rec.val = Some(ValMetrics { mse, ssim });
            }
            log.records.push(rec);
        }
        Ok(log)
    }
}

/// Why a run stopped before its configured step budget.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainAbort {
    pub step: u64,
    pub reason: String,
}

/// Result of a training run. On a non-finite loss the run stops and
/// `checkpoint` holds the last good capture instead of the final state.
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: TrainLog,
    pub completed: bool,
    pub abort: Option<TrainAbort>,
}

/// The dehazing subnetworks; `coarse`/`fine` are absent in the ablation.
#[derive(Clone, Debug)]
pub struct DehazeModel {
    pub coarse: Option<CoarseNet>,
    pub fine: Option<FineNet>,
    pub removal: HazeRemovalNet,
}

impl DehazeModel {
    pub fn new(cfg: &TrainConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        if cfg.ablation_no_transmission {
            let mut removal = HazeRemovalNet::new(
                3,
                cfg.removal_blocks,
                cfg.removal_layers_per_block,
                cfg.removal_filters,
            );
            init_weights(&mut removal, &mut rng);
            DehazeModel {
                coarse: None,
                fine: None,
                removal,
            }
        } else {
            let mut coarse = CoarseNet::new();
            let mut fine = FineNet::new();
            let mut removal = HazeRemovalNet::new(
                4,
                cfg.removal_blocks,
                cfg.removal_layers_per_block,
                cfg.removal_filters,
            );
            init_weights(&mut coarse, &mut rng);
            init_weights(&mut fine, &mut rng);
            init_weights(&mut removal, &mut rng);
            DehazeModel {
                coarse: Some(coarse),
                fine: Some(fine),
                removal,
            }
        }
    }

    pub fn is_ablation(&self) -> bool {
        self.coarse.is_none()
    }

    fn zero_grads(&mut self) {
        if let Some(c) = &mut self.coarse {
            zero_grads(c);
        }
        if let Some(f) = &mut self.fine {
            zero_grads(f);
        }
        zero_grads(&mut self.removal);
    }

    /// Deterministic inference: transmission (absent in the ablation) and
    /// the dehazed image clamped to [0, 1].
    pub fn infer(&self, hazy: &Tensor) -> Result<(Option<Tensor>, Tensor)> {
        if let (Some(coarse), Some(fine)) = (&self.coarse, &self.fine) {
            let (coarse_t, _) = coarse.forward(hazy)?;
            let (fine_t, _) = fine.forward(hazy, &coarse_t)?;
            let (_, dehazed, _) = self.removal.forward(hazy, Some(&fine_t))?;
            Ok((Some(fine_t), dehazed.clamped(0.0, 1.0)))
        } else {
            let (_, dehazed, _) = self.removal.forward(hazy, None)?;
            Ok((None, dehazed.clamped(0.0, 1.0)))
        }
    }

    fn capture_into(&mut self, ckpt: &mut Checkpoint) {
        if let Some(c) = &mut self.coarse {
            ckpt.capture("coarse", c);
        }
        if let Some(f) = &mut self.fine {
            ckpt.capture("fine", f);
        }
        ckpt.capture("removal", &mut self.removal);
    }

    pub fn apply_checkpoint(&mut self, ckpt: &Checkpoint) -> Result<()> {
        if let Some(c) = &mut self.coarse {
            ckpt.apply("coarse", c)?;
        }
        if let Some(f) = &mut self.fine {
            ckpt.apply("fine", f)?;
        }
        ckpt.apply("removal", &mut self.removal)
    }
}

impl ParamVisit for DehazeModel {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(crate::net::ParamEntry<'_>)) {
        if let Some(c) = &mut self.coarse {
            c.visit_params(&format!("{prefix}coarse"), f);
        }
        if let Some(fine) = &mut self.fine {
            fine.visit_params(&format!("{prefix}fine"), f);
        }
        self.removal.visit_params(&format!("{prefix}removal"), f);
    }
}

fn stack_field(samples: &[Sample], idx: &[usize], field: impl Fn(&Sample) -> &Tensor) -> Result<Tensor> {
    let parts: Vec<&Tensor> = idx.iter().map(|&i| field(&samples[i])).collect();
    Tensor::stack(&parts)
}

/// Deterministic epoch-shuffled batch index stream.
struct BatchStream {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    n: usize,
    batch: usize,
}

impl BatchStream {
    fn new(seed: u64, n: usize, batch: usize) -> Self {
        BatchStream {
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: Vec::new(),
            cursor: 0,
            n,
            batch,
        }
    }

    fn next_batch(&mut self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.batch);
        while out.len() < self.batch {
            if self.cursor >= self.order.len() {
                self.order = (0..self.n).collect();
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

fn adam_update_net(
    adam: &mut AdamState,
    net: &mut (impl ParamVisit + ?Sized),
    prefix: &str,
) -> Result<()> {
    let mut err = None;
    net.visit_params(prefix, &mut |e| {
        if err.is_none() && e.trainable {
            if let Err(x) = adam.update(&e.name, e.tensor) {
                err = Some(x);
            }
        }
    });
    err.map_or(Ok(()), Err)
}

fn capture_adam(ckpt: &mut Checkpoint, adam: &AdamState, prefix: &str) {
    for (name, (m, v)) in adam.moment_entries() {
        ckpt.insert_vec(format!("{prefix}/{name}/m"), m.clone());
        ckpt.insert_vec(format!("{prefix}/{name}/v"), v.clone());
    }
}

/// Restores moment buffers saved by [`capture_adam`].
fn restore_adam(ckpt: &Checkpoint, adam: &mut AdamState, prefix: &str, step: u64) {
    adam.step = step;
    let probe = format!("{prefix}/");
    for (name, tensor) in &ckpt.tensors {
        if let Some(rest) = name.strip_prefix(&probe) {
            if let Some(param) = rest.strip_suffix("/m") {
                let m = tensor.data().to_vec();
                let v_name = format!("{prefix}/{param}/v");
                if let Some(v) = ckpt.tensors.get(&v_name) {
                    adam.insert_moments(param.to_string(), m, v.data().to_vec());
                }
            }
        }
    }
}

/// Validation MSE/SSIM of the dehazed output over a split, in batches.
fn validate_dehazing(
    model: &DehazeModel,
    val: &[Sample],
    batch: usize,
    ssim_cfg: &SsimConfig,
) -> Result<ValMetrics> {
    let mut mse_sum = 0.0;
    let mut ssim_sum = 0.0;
    let mut count = 0.0;
    let mut start = 0;
    while start < val.len() {
        let end = (start + batch).min(val.len());
        let idx: Vec<usize> = (start..end).collect();
        let hazy = stack_field(val, &idx, |s| &s.hazy)?;
        let clear = stack_field(val, &idx, |s| &s.clear)?;
        let (_, dehazed) = model.infer(&hazy)?;
        let k = idx.len() as f64;
        mse_sum += mse_metric(&dehazed, &clear, MseScale::Unit)? * k;
        ssim_sum += ssim_metric(&dehazed, &clear, ssim_cfg)? * k;
        count += k;
        start = end;
    }
    Ok(ValMetrics {
        mse: mse_sum / count,
        ssim: ssim_sum / count,
    })
}

struct StepLosses {
    losses: Vec<(String, f64)>,
    total: f64,
}

/// One forward/backward pass of the dehazing objective on a batch;
/// gradients are accumulated into the model.
fn dehazing_step(
    model: &mut DehazeModel,
    hazy: &Tensor,
    t_true: &Tensor,
    clear: &Tensor,
    ssim_cfg: &SsimConfig,
) -> Result<StepLosses> {
    model.zero_grads();
    if let (Some(coarse), Some(fine)) = (&mut model.coarse, &mut model.fine) {
        let (coarse_t, c_cache) = coarse.forward(hazy)?;
        let (fine_t, f_cache) = fine.forward(hazy, &coarse_t)?;
        let (residual, _, r_cache) = model.removal.forward(hazy, Some(&fine_t))?;

        let tp = tp_total(&coarse_t, &fine_t, t_true, ssim_cfg)?;
        let d = d_total(&residual, hazy, clear, ssim_cfg)?;

        let g_input = model.removal.backward(&r_cache, &d.grad_residual)?;
        let (_, g_fine_from_removal) = split_channels(&g_input, 3)?;
        let grad_fine = tp.grad_fine.add(&g_fine_from_removal)?;
        let (_, g_coarse_from_fine) = fine.backward(&f_cache, &grad_fine)?;
        let grad_coarse = tp.grad_coarse.add(&g_coarse_from_fine)?;
        coarse.backward(&c_cache, &grad_coarse)?;

        let mut losses = tp.report.components;
        losses.extend(d.report.components);
        Ok(StepLosses {
            losses,
            total: tp.report.total + d.report.total,
        })
    } else {
        let (residual, _, r_cache) = model.removal.forward(hazy, None)?;
        let d = d_total(&residual, hazy, clear, ssim_cfg)?;
        model.removal.backward(&r_cache, &d.grad_residual)?;
        Ok(StepLosses {
            losses: d.report.components,
            total: d.report.total,
        })
    }
}

/// Spot check: a handful of parameter coordinates, central differences
/// against the freshly accumulated analytic gradients. A graze of a ReLU
/// kink shrinks with the step, a real gradient bug does not, so failures
/// re-check at a smaller step before aborting.
fn spot_check_gradients(
    model: &DehazeModel,
    hazy: &Tensor,
    t_true: &Tensor,
    clear: &Tensor,
    ssim_cfg: &SsimConfig,
    seed: u64,
) -> Result<()> {
    let mut model = model.clone();
    let analytic = pack_grads(&mut model);
    let point = pack_values(&mut model);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(STREAM_SPOT_CHECK));
    let indices: Vec<usize> = (0..4).map(|_| rng.random_range(0..point.len())).collect();
    let base = model.clone();
    let mut f = |values: &[f64]| {
        let mut m = base.clone();
        unpack_values(&mut m, values);
        let mut scratch = m.clone();
        dehazing_step(&mut scratch, hazy, t_true, clear, ssim_cfg)
            .map(|s| s.total)
            .unwrap_or(f64::NAN)
    };
    for h in [1e-5, 1e-6] {
        let check = GradCheck {
            step: h,
            denom_floor: 1e-8,
        };
        let err = check.max_rel_err_at(&mut f, &point, &analytic, &indices);
        if err < 1e-3 {
            return Ok(());
        }
        if h == 1e-6 {
            return Err(Error::InvalidValue {
                context: "gradient spot check",
                detail: format!("step-0 analytic gradients disagree with finite differences ({err:.3e})"),
            });
        }
    }
    unreachable!()
}

/// Joint training of the transmission-prediction and haze-removal
/// subnetworks (or the no-transmission ablation) on summed objectives.
pub fn train_dehazing(train: &[Sample], val: &[Sample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    let model = DehazeModel::new(cfg);
    let adam = AdamState::new(cfg.adam);
    run_dehazing(model, adam, 0, train, val, cfg)
}

/// Continues a run from a checkpoint; step numbering picks up where the
/// checkpoint left off and the configured step budget is a total.
pub fn resume_dehazing(
    ckpt: &Checkpoint,
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let mut model = DehazeModel::new(cfg);
    model.apply_checkpoint(ckpt)?;
    let mut adam = AdamState::new(cfg.adam);
    restore_adam(ckpt, &mut adam, "adam", ckpt.meta.step);
    run_dehazing(model, adam, ckpt.meta.step, train, val, cfg)
}

fn dehazing_checkpoint(
    model: &mut DehazeModel,
    adam: &AdamState,
    cfg: &TrainConfig,
    step: u64,
) -> Checkpoint {
    let stage = if model.is_ablation() { "ablation" } else { "dehaze" };
    let mut ckpt = Checkpoint::new(CheckpointMeta {
        seed: cfg.seed,
        config_hash: cfg.config_hash(),
        stage: stage.to_string(),
        step,
    });
    model.capture_into(&mut ckpt);
    capture_adam(&mut ckpt, adam, "adam");
    ckpt
}

fn run_dehazing(
    mut model: DehazeModel,
    mut adam: AdamState,
    start_step: u64,
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptyDataset("train_dehazing needs train and val splits"));
    }
    if cfg.batch_size_dehaze == 0 || cfg.batch_size_dehaze > train.len() {
        return Err(Error::InvalidValue {
            context: "train_dehazing",
            detail: format!(
                "batch size {} must be in 1..={}",
                cfg.batch_size_dehaze,
                train.len()
            ),
        });
    }
    let started = Instant::now();
    let stage = if model.is_ablation() { "ablation" } else { "dehaze" };
    let mut log = TrainLog::default();
    let mut batches = BatchStream::new(
        cfg.seed
            .wrapping_add(STREAM_SHUFFLE)
            .wrapping_add(start_step),
        train.len(),
        cfg.batch_size_dehaze,
    );
    let mut last_good = dehazing_checkpoint(&mut model, &adam, cfg, start_step);

    for step in start_step..cfg.steps_dehaze as u64 {
        let idx = batches.next_batch();
        let hazy = stack_field(train, &idx, |s| &s.hazy)?;
        let t_true = stack_field(train, &idx, |s| &s.transmission)?;
        let clear = stack_field(train, &idx, |s| &s.clear)?;

        let losses = dehazing_step(&mut model, &hazy, &t_true, &clear, &cfg.ssim)?;
        if step == start_step {
            spot_check_gradients(&model, &hazy, &t_true, &clear, &cfg.ssim, cfg.seed)?;
        }
        if !losses.total.is_finite() {
            log.wall_seconds = started.elapsed().as_secs_f64();
            return Ok(TrainOutcome {
                checkpoint: last_good,
                log,
                completed: false,
                abort: Some(TrainAbort {
                    step,
                    reason: "non-finite loss".to_string(),
                }),
            });
        }
        adam.begin_step();
        if let Some(c) = &mut model.coarse {
            adam_update_net(&mut adam, c, "coarse")?;
        }
        if let Some(f) = &mut model.fine {
            adam_update_net(&mut adam, f, "fine")?;
        }
        adam_update_net(&mut adam, &mut model.removal, "removal")?;

        let val_metrics = if (step + 1) % cfg.val_cadence as u64 == 0
            || step + 1 == cfg.steps_dehaze as u64
        {
            Some(validate_dehazing(&model, val, cfg.batch_size_dehaze, &cfg.ssim)?)
        } else {
            None
        };
        log.records.push(StepRecord {
            stage: stage.to_string(),
            step,
            losses: losses.losses,
            total: losses.total,
            extras: Vec::new(),
            val: val_metrics,
        });

        if (step + 1) % cfg.checkpoint_cadence as u64 == 0 {
            last_good = dehazing_checkpoint(&mut model, &adam, cfg, step + 1);
        }
    }
    let final_step = (cfg.steps_dehaze as u64).max(start_step);
    let checkpoint = dehazing_checkpoint(&mut model, &adam, cfg, final_step);
    log.wall_seconds = started.elapsed().as_secs_f64();
    Ok(TrainOutcome {
        checkpoint,
        log,
        completed: true,
        abort: None,
    })
}

/// Ablation entry point: identical protocol with the transmission
/// subnetworks removed (3-channel haze removal, no transmission losses).
pub fn train_ablation(train: &[Sample], val: &[Sample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    let mut cfg = cfg.clone();
    cfg.ablation_no_transmission = true;
    train_dehazing(train, val, &cfg)
}

/// Outcome of refinement training; `phase1_checkpoint` captures the
/// generator right after the content-only phase.
pub struct RefineOutcome {
    pub checkpoint: Checkpoint,
    pub phase1_checkpoint: Checkpoint,
    pub log: TrainLog,
    pub completed: bool,
    pub abort: Option<TrainAbort>,
}

fn refine_checkpoint(
    generator: &mut GeneratorNet,
    discriminator: &mut DiscriminatorNet,
    adam_g: &AdamState,
    adam_d: &AdamState,
    cfg: &TrainConfig,
    stage: &str,
    step: u64,
) -> Checkpoint {
    let mut ckpt = Checkpoint::new(CheckpointMeta {
        seed: cfg.seed,
        config_hash: cfg.config_hash(),
        stage: stage.to_string(),
        step,
    });
    ckpt.capture("generator", generator);
    ckpt.capture("discriminator", discriminator);
    capture_adam(&mut ckpt, adam_g, "adam_g");
    capture_adam(&mut ckpt, adam_d, "adam_d");
    ckpt
}

/// Stage-wise refinement. Phase 1 trains the generator on content losses
/// against its own inputs (the discriminator stays untouched, bit for bit);
/// phase 2 alternates one discriminator step and one generator step per
/// iteration, with the adversarial term weighted into the generator
/// objective. The last fifth of `dehazed_pool` (at least one image) is held
/// out as the validation split.
pub fn train_refinement(
    dehazed_pool: &[Tensor],
    target_pool: &[Tensor],
    cfg: &TrainConfig,
) -> Result<RefineOutcome> {
    if dehazed_pool.is_empty() {
        return Err(Error::EmptyDataset("train_refinement: dehazed pool"));
    }
    if target_pool.is_empty() {
        return Err(Error::EmptyDataset("train_refinement: target pool"));
    }
    let shape = dehazed_pool[0].shape();
    for t in dehazed_pool.iter().chain(target_pool.iter()) {
        if t.shape() != shape {
            return Err(Error::ShapeMismatch {
                context: "train_refinement",
                expected: format!("{shape:?}"),
                got: format!("{:?}", t.shape()),
            });
        }
    }
    let val_len = (dehazed_pool.len() / 5).max(1).min(dehazed_pool.len());
    let train_len = dehazed_pool.len() - val_len;
    let (g_train, g_val) = if train_len == 0 {
        // degenerate single-image pool: train and validate on the same image
        (dehazed_pool, dehazed_pool)
    } else {
        dehazed_pool.split_at(train_len)
    };
    if cfg.batch_size_refine == 0 || cfg.batch_size_refine > g_train.len() {
        return Err(Error::InvalidValue {
            context: "train_refinement",
            detail: format!(
                "batch size {} must be in 1..={}",
                cfg.batch_size_refine,
                g_train.len()
            ),
        });
    }

    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut generator = GeneratorNet::new(
        cfg.generator_layers,
        cfg.generator_filters,
        cfg.generator_skips,
    );
    let mut discriminator = DiscriminatorNet::new();
    init_weights(&mut generator, &mut rng);
    init_weights(&mut discriminator, &mut rng);
    let mut adam_g = AdamState::new(cfg.adam);
    let mut adam_d = AdamState::new(cfg.adam);
    let mut log = TrainLog::default();

    let mut batches = BatchStream::new(
        cfg.seed.wrapping_add(STREAM_REFINE_BATCH),
        g_train.len(),
        cfg.batch_size_refine,
    );
    let mut real_batches = BatchStream::new(
        cfg.seed
            .wrapping_add(STREAM_REFINE_BATCH)
            .wrapping_add(1),
        target_pool.len(),
        cfg.batch_size_refine.min(target_pool.len()),
    );

    let stack = |pool: &[Tensor], idx: &[usize]| -> Result<Tensor> {
        let parts: Vec<&Tensor> = idx.iter().map(|&i| &pool[i]).collect();
        Tensor::stack(&parts)
    };

    // ---- phase 1: content-only generator training -------------------------
    let mut totals: Vec<f64> = Vec::new();
    let mut best_avg = f64::INFINITY;
    let mut since_best = 0usize;
    let mut phase1_steps_done = 0u64;
    for step in 0..cfg.refine_phase1_steps as u64 {
        let idx = batches.next_batch();
        let src = stack(g_train, &idx)?;
        zero_grads(&mut generator);
        let (refined, cache) = generator.forward_train(&src)?;
        let (rf_mse, g_mse) = mse_loss(&refined, &src)?;
        let (rf_ssim, g_ssim) = ssim_loss(&refined, &src, &cfg.ssim)?;
        let total = rf_mse + rf_ssim;
        if !total.is_finite() {
            log.wall_seconds = started.elapsed().as_secs_f64();
            let ckpt = refine_checkpoint(
                &mut generator,
                &mut discriminator,
                &adam_g,
                &adam_d,
                cfg,
                "refine-phase1",
                step,
            );
            return Ok(RefineOutcome {
                checkpoint: ckpt.clone(),
                phase1_checkpoint: ckpt,
                log,
                completed: false,
                abort: Some(TrainAbort {
                    step,
                    reason: "non-finite loss in phase 1".to_string(),
                }),
            });
        }
        generator.backward(&cache, &g_mse.add(&g_ssim)?)?;
        adam_g.begin_step();
        adam_update_net(&mut adam_g, &mut generator, "generator")?;

        let val = if (step + 1) % cfg.val_cadence as u64 == 0
            || step + 1 == cfg.refine_phase1_steps as u64
        {
            Some(validate_generator(&generator, g_val, cfg)?)
        } else {
            None
        };
        log.records.push(StepRecord {
            stage: "refine1".to_string(),
            step,
            losses: vec![("rf_mse".to_string(), rf_mse), ("rf_ssim".to_string(), rf_ssim)],
            total,
            extras: Vec::new(),
            val,
        });
        phase1_steps_done = step + 1;

        // early stop once the windowed moving average stops improving:
        // the best 100-step average must improve by at least 0.1% within
        // every trailing window, or the phase is considered converged
        totals.push(total);
        let w = cfg.phase1_early_stop_window;
        if totals.len() >= 2 * w {
            let cur: f64 = totals[totals.len() - w..].iter().sum::<f64>() / w as f64;
            if cur < best_avg * (1.0 - cfg.phase1_early_stop_rel) {
                best_avg = cur;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= w {
                    break;
                }
            }
        }
    }
    let phase1_checkpoint = refine_checkpoint(
        &mut generator,
        &mut discriminator,
        &adam_g,
        &adam_d,
        cfg,
        "refine-phase1",
        phase1_steps_done,
    );

    // ---- phase 2: alternating adversarial training ------------------------
    let mut last_good = phase1_checkpoint.clone();
    let mut saturation_streak = 0usize;
    let mut saturation_warned = false;
    for iter in 0..cfg.refine_phase2_steps as u64 {
        let step = phase1_steps_done + iter;

        // discriminator step: maximize E[log D(real)] + E[log(1 - D(fake))]
        let real = stack(target_pool, &real_batches.next_batch())?;
        let fake_src = stack(g_train, &batches.next_batch())?;
        let fake = generator.forward_eval(&fake_src)?;
        zero_grads(&mut discriminator);
        let (d_real, cache_real) = discriminator.forward_train(&real)?;
        let (d_fake, cache_fake) = discriminator.forward_train(&fake)?;
        let adv = adversarial_losses(&d_real, &d_fake)?;
        discriminator.backward(&cache_real, &adv.grad_real)?;
        discriminator.backward(&cache_fake, &adv.grad_fake_discriminator)?;
        adam_d.begin_step();
        adam_update_net(&mut adam_d, &mut discriminator, "discriminator")?;

        // generator step: content losses plus the weighted adversarial term
        let src = stack(g_train, &batches.next_batch())?;
        zero_grads(&mut generator);
        zero_grads(&mut discriminator);
        let (refined, g_cache) = generator.forward_train(&src)?;
        let (d_fake2, d_cache) = discriminator.forward_train(&refined)?;
        let rf = rf_total(&refined, &src, &d_fake2, &cfg.ssim, cfg.adv_weight)?;
        let grad_adv_input = discriminator.backward(&d_cache, &rf.grad_d_fake)?;
        let grad_refined = rf.grad_refined.add(&grad_adv_input)?;
        generator.backward(&g_cache, &grad_refined)?;
        adam_g.begin_step();
        adam_update_net(&mut adam_g, &mut generator, "generator")?;

        let finite = rf.report.total.is_finite() && adv.discriminator_loss.is_finite();
        if !finite {
            log.wall_seconds = started.elapsed().as_secs_f64();
            return Ok(RefineOutcome {
                checkpoint: last_good,
                phase1_checkpoint,
                log,
                completed: false,
                abort: Some(TrainAbort {
                    step,
                    reason: "non-finite loss in phase 2".to_string(),
                }),
            });
        }

        // saturation: discriminator pinned to 0/1 for a long stretch
        let mean_dev = (d_real.map(|v| (v - 0.5).abs()).mean()
            + d_fake.map(|v| (v - 0.5).abs()).mean())
            / 2.0;
        if mean_dev > 0.499 {
            saturation_streak += 1;
            if saturation_streak >= 100 && !saturation_warned {
                log.warnings
                    .push((step, "discriminator_saturation".to_string()));
                saturation_warned = true;
            }
        } else {
            saturation_streak = 0;
            saturation_warned = false;
        }

        let val = if (step + 1) % cfg.val_cadence as u64 == 0
            || iter + 1 == cfg.refine_phase2_steps as u64
        {
            Some(validate_generator(&generator, g_val, cfg)?)
        } else {
            None
        };
        log.records.push(StepRecord {
            stage: "refine2".to_string(),
            step,
            losses: rf.report.components,
            total: rf.report.total,
            extras: vec![
                ("d_loss".to_string(), adv.discriminator_loss),
                ("d_real".to_string(), d_real.mean()),
                ("d_fake".to_string(), d_fake.mean()),
            ],
            val,
        });
        if (iter + 1) % cfg.checkpoint_cadence as u64 == 0 {
            last_good = refine_checkpoint(
                &mut generator,
                &mut discriminator,
                &adam_g,
                &adam_d,
                cfg,
                "refine",
                step + 1,
            );
        }
    }
    let final_step = phase1_steps_done + cfg.refine_phase2_steps as u64;
    let checkpoint = refine_checkpoint(
        &mut generator,
        &mut discriminator,
        &adam_g,
        &adam_d,
        cfg,
        "refine",
        final_step,
    );
    log.wall_seconds = started.elapsed().as_secs_f64();
    Ok(RefineOutcome {
        checkpoint,
        phase1_checkpoint,
        log,
        completed: true,
        abort: None,
    })
}

/// Fixed saturation/contrast boost that manufactures the "vivid" target
/// domain for refinement training from held-out clear images.
pub fn vivid_boost(image: &Tensor) -> Tensor {
    let [n, c, h, w] = image.shape();
    debug_assert_eq!(c, 3);
    let mut out = Tensor::zeros(image.shape());
    for ni in 0..n {
        for y in 0..h {
            for x in 0..w {
                let r = image.at(ni, 0, y, x);
                let g = image.at(ni, 1, y, x);
                let b = image.at(ni, 2, y, x);
                let luma = (r + g + b) / 3.0;
                for (ci, v) in [r, g, b].into_iter().enumerate() {
                    // saturation x1.3, then an s-curve around mid-gray
                    let sat = luma + 1.3 * (v - luma);
                    let contrast = 0.5 + 1.2 * (sat - 0.5);
                    out.set(ni, ci, y, x, contrast.clamp(0.0, 1.0));
                }
            }
        }
    }
    out
}

/// Validation content MSE/SSIM of the generator against its own inputs.
fn validate_generator(
    generator: &GeneratorNet,
    val: &[Tensor],
    cfg: &TrainConfig,
) -> Result<ValMetrics> {
    let mut mse_sum = 0.0;
    let mut ssim_sum = 0.0;
    let mut count = 0.0;
    let mut start = 0;
    while start < val.len() {
        let end = (start + cfg.batch_size_refine).min(val.len());
        let parts: Vec<&Tensor> = val[start..end].iter().collect();
        let src = Tensor::stack(&parts)?;
        let refined = generator.forward_eval(&src)?;
        let k = (end - start) as f64;
        mse_sum += mse_metric(&refined, &src, MseScale::Unit)? * k;
        ssim_sum += ssim_metric(&refined, &src, &cfg.ssim)? * k;
        count += k;
        start = end;
    }
    Ok(ValMetrics {
        mse: mse_sum / count,
        ssim: ssim_sum / count,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Stage {
    Dehaze,
    Refine,
}

pub struct PipelineOutput {
    /// Fine transmission map; absent for ablation checkpoints.
    pub transmission: Option<Tensor>,
    pub dehazed: Tensor,
    /// Present only for `Stage::Refine`.
    pub refined: Option<Tensor>,
}

/// Rebuilds the networks recorded in a checkpoint by inspecting its tensor
/// names and shapes.
pub fn model_from_checkpoint(ckpt: &Checkpoint) -> Result<DehazeModel> {
    if !ckpt.has_prefix("removal") {
        return Err(Error::CheckpointMissingParam {
            name: "removal/*".to_string(),
        });
    }
    let mut blocks = 0usize;
    let mut layers = 0usize;
    for name in ckpt.tensors.keys() {
        if let Some(rest) = name.strip_prefix("removal/block") {
            if let Some((b, tail)) = rest.split_once("/conv") {
                if let (Ok(b), Some((l, _))) = (b.parse::<usize>(), tail.split_once('/')) {
                    blocks = blocks.max(b);
                    if b == 1 {
                        if let Ok(l) = l.parse::<usize>() {
                            layers = layers.max(l);
                        }
                    }
                }
            }
        }
    }
    let first = ckpt
        .tensors
        .get("removal/block1/conv1/weight")
        .ok_or_else(|| Error::CheckpointMissingParam {
            name: "removal/block1/conv1/weight".to_string(),
        })?;
    let filters = first.shape()[0];
    let in_channels = first.shape()[1];
    let mut removal = HazeRemovalNet::new(in_channels, blocks, layers, filters);
    ckpt.apply("removal", &mut removal)?;

    if in_channels == 4 {
        let mut coarse = CoarseNet::new();
        let mut fine = FineNet::new();
        ckpt.apply("coarse", &mut coarse)?;
        ckpt.apply("fine", &mut fine)?;
        Ok(DehazeModel {
            coarse: Some(coarse),
            fine: Some(fine),
            removal,
        })
    } else {
        Ok(DehazeModel {
            coarse: None,
            fine: None,
            removal,
        })
    }
}

/// Rebuilds the generator recorded in a checkpoint.
pub fn generator_from_checkpoint(ckpt: &Checkpoint) -> Result<GeneratorNet> {
    let mut layers = 0usize;
    for name in ckpt.tensors.keys() {
        if let Some(rest) = name.strip_prefix("generator/conv") {
            if let Some((i, _)) = rest.split_once('/') {
                if let Ok(i) = i.parse::<usize>() {
                    layers = layers.max(i);
                }
            }
        }
    }
    if layers == 0 {
        return Err(Error::CheckpointMissingParam {
            name: "generator/*".to_string(),
        });
    }
    let first = ckpt
        .tensors
        .get("generator/conv1/weight")
        .ok_or_else(|| Error::CheckpointMissingParam {
            name: "generator/conv1/weight".to_string(),
        })?;
    let filters = first.shape()[0];
    let skips = ckpt
        .tensors
        .get("generator/skip_count")
        .map(|t| t.data()[0] as usize)
        .unwrap_or(0);
    let mut generator = GeneratorNet::new(layers, filters, skips);
    ckpt.apply("generator", &mut generator)?;
    Ok(generator)
}

/// Deterministic inference through the full pipeline. `Stage::Refine`
/// additionally runs the generator (eval-mode batch norm); outputs are
/// clamped to [0, 1].
pub fn run_pipeline(hazy: &Tensor, ckpt: &Checkpoint, stage: Stage) -> Result<PipelineOutput> {
    let model = model_from_checkpoint(ckpt)?;
    let (transmission, dehazed) = model.infer(hazy)?;
    let refined = match stage {
        Stage::Dehaze => None,
        Stage::Refine => {
            let generator = generator_from_checkpoint(ckpt)?;
            Some(generator.forward_eval(&dehazed)?.clamped(0.0, 1.0))
        }
    };
    Ok(PipelineOutput {
        transmission,
        dehazed,
        refined,
    })
}

/// Validation-MSE-vs-step curves of two runs trained under identical seeds:
/// the full model and the no-transmission ablation.
pub struct PairedCurves {
    pub steps: Vec<u64>,
    pub full_val_mse: Vec<f64>,
    pub ablation_val_mse: Vec<f64>,
}

impl PairedCurves {
    pub fn to_delimited(&self) -> String {
        let mut s = String::from("step,full_val_mse,ablation_val_mse\n");
        for i in 0..self.steps.len() {
            s.push_str(&format!(
                "{},{},{}\n",
                self.steps[i], self.full_val_mse[i], self.ablation_val_mse[i]
            ));
        }
        s
    }
}

/// Trains the full model and the ablation under identical seeds and pairs
/// their validation curves. The direction is recorded by the caller, not
/// asserted.
pub fn ablation_comparison(
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
) -> Result<(PairedCurves, TrainOutcome, TrainOutcome)> {
    let mut full_cfg = cfg.clone();
    full_cfg.ablation_no_transmission = false;
    let mut abl_cfg = cfg.clone();
    abl_cfg.ablation_no_transmission = true;
    let full = train_dehazing(train, val, &full_cfg)?;
    let ablation = train_dehazing(train, val, &abl_cfg)?;

    let extract = |log: &TrainLog| -> Vec<(u64, f64)> {
        log.records
            .iter()
            .filter_map(|r| r.val.as_ref().map(|v| (r.step, v.mse)))
            .collect()
    };
    let f = extract(&full.log);
    let a = extract(&ablation.log);
    let mut curves = PairedCurves {
        steps: Vec::new(),
        full_val_mse: Vec::new(),
        ablation_val_mse: Vec::new(),
    };
    for ((fs, fm), (as_, am)) in f.iter().zip(a.iter()) {
        debug_assert_eq!(fs, as_);
        curves.steps.push(*fs);
        curves.full_val_mse.push(*fm);
        curves.ablation_val_mse.push(*am);
    }
    Ok((curves, full, ablation))
}
