//! Slot-level downlink engine.
//!
//! Each cell runs its own deterministic loop over 0.5 ms slots. Within a slot
//! the order is fixed: channel and CQI update, packet arrivals, due HARQ
//! feedback, deadline expiry, then (downlink slots only) scheduling of
//! retransmissions followed by new data.

use std::collections::VecDeque;

use rand::Rng;
use serde::Serialize;

use crate::config::Scenario;
use crate::error::{Error, Result};
use crate::harq::{CbgFeedback, CbgMask, HarqMode, HarqProcess, PacketSegment};
use crate::link::{ChannelState, CqiModel, LinkModel, SinrProcess};
use crate::olla::{select_mcs, OllaState};
use crate::rng::{ue_stream, StreamRng, UeStream};
use crate::sim::kpi::KpiRecord;
use crate::sim::tdd::{SlotKind, TddPattern};
use crate::traffic::{generate_arrivals, XrPacket};

const EPS_MS: f64 = 1e-9;
/// Starting PF throughput average, in bits per slot.
const PF_INIT: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PacketOutcome {
    OnTime,
    Late,
    Lost,
}

/// Packet fate over the whole run, warm-up included.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Conservation {
    pub generated: u64,
    pub on_time: u64,
    pub late: u64,
    pub lost: u64,
    pub in_flight: u64,
}

impl Conservation {
    pub fn holds(&self) -> bool {
        self.generated == self.on_time + self.late + self.lost + self.in_flight
    }

    fn add(&mut self, o: &Conservation) {
        self.generated += o.generated;
        self.on_time += o.on_time;
        self.late += o.late;
        self.lost += o.lost;
        self.in_flight += o.in_flight;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OffsetSample {
    pub time_ms: f64,
    pub ue_id: usize,
    pub offset_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HarqTraceRow {
    pub process_id: usize,
    pub tx_index: u8,
    pub mcs: usize,
    pub pending_bitmap: String,
    pub sinr_db: f64,
    pub outcome_bitmap: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PacketTraceRow {
    pub ue_id: usize,
    pub seq: u64,
    pub arrival_ms: f64,
    pub size_bits: u64,
    pub deadline_ms: f64,
}

/// Which traces a run should collect.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TraceFlags {
    pub offset: bool,
    pub harq: bool,
    pub packet: bool,
}

impl TraceFlags {
    pub fn from_scenario(s: &Scenario) -> Self {
        Self { offset: s.output.offset_trace, harq: s.output.harq_trace, packet: s.output.packet_trace }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOutput {
    pub seed: u64,
    /// Post-warm-up KPIs indexed by global UE id.
    pub kpis: Vec<KpiRecord>,
    /// Used share of the PRBs in every post-warm-up downlink slot of every cell.
    pub prb_load: Vec<f64>,
    pub conservation: Conservation,
    pub offset_trace: Vec<OffsetSample>,
    pub harq_trace: Vec<HarqTraceRow>,
    pub packet_trace: Vec<PacketTraceRow>,
}

impl RunOutput {
    pub fn mean_prb_load(&self) -> Option<f64> {
        (!self.prb_load.is_empty()).then(|| self.prb_load.iter().sum::<f64>() / self.prb_load.len() as f64)
    }

    pub fn pooled_kpi(&self) -> KpiRecord {
        let mut all = KpiRecord::default();
        for k in &self.kpis {
            all.merge(k);
        }
        all
    }

    /// Mean MCS index over new transport blocks.
    pub fn mean_mcs(&self) -> Option<f64> {
        let hist = self.pooled_kpi().mcs_histogram;
        let n: u64 = hist.iter().sum();
        (n > 0).then(|| hist.iter().enumerate().map(|(i, c)| i as f64 * *c as f64).sum::<f64>() / n as f64)
    }
}

struct Packet {
    p: XrPacket,
    unscheduled: u64,
    delivered: u64,
    outcome: Option<PacketOutcome>,
    measured: bool,
}

struct Proc {
    harq: HarqProcess,
    feedback: CbgFeedback,
    feedback_slot: u64,
    awaiting: bool,
}

struct Ue {
    id: usize,
    sinr: SinrProcess,
    channel: ChannelState,
    cqi_pipeline: VecDeque<(f64, f64)>,
    channel_rng: StreamRng,
    cqi_rng: StreamRng,
    harq_rng: StreamRng,
    olla: OllaState,
    packets: Vec<Packet>,
    next_arrival: usize,
    first_open: usize,
    queue: VecDeque<usize>,
    queued_bits: u64,
    procs: Vec<Option<Proc>>,
    avg_tput: f64,
    kpi: KpiRecord,
}

impl Ue {
    fn finalize(&mut self, idx: usize, outcome: PacketOutcome) {
        let pkt = &mut self.packets[idx];
        if pkt.outcome.is_some() {
            return;
        }
        pkt.outcome = Some(outcome);
        self.queued_bits -= pkt.unscheduled;
        pkt.unscheduled = 0;
        if pkt.measured {
            match outcome {
                PacketOutcome::OnTime => self.kpi.packets_on_time += 1,
                PacketOutcome::Late => self.kpi.packets_late += 1,
                PacketOutcome::Lost => self.kpi.packets_lost += 1,
            }
        }
    }

    fn all_finalized(&self, segments: &[PacketSegment]) -> bool {
        segments.iter().all(|s| self.packets[s.packet].outcome.is_some())
    }
}

/// Immutable per-run context shared by all cells.
struct Ctx<'a> {
    scenario: &'a Scenario,
    link: LinkModel,
    tdd: TddPattern,
    mode: HarqMode,
    cqi: CqiModel,
    inner_target: f64,
    re_per_prb: f64,
    slot_ms: f64,
    warmup_ms: f64,
    cqi_period_slots: u64,
    traces: TraceFlags,
}

impl Ctx<'_> {
    fn bits_per_prb(&self, mcs: usize) -> f64 {
        self.link.table.entries()[mcs].spectral_efficiency * self.re_per_prb * f64::from(self.scenario.phy.layers)
    }

    fn new_data_mcs(&self, ue: &Ue) -> usize {
        select_mcs(ue.olla.effective_sinr(ue.channel.cqi_sinr_db), self.inner_target, &self.link)
    }
}

/// Run one replication of `scenario` with `seed`.
pub fn simulate(scenario: &Scenario, seed: u64, traces: TraceFlags) -> Result<RunOutput> {
    let targets = scenario.derived_targets()?;
    let slot_ms = scenario.slot_ms();
    let ctx = Ctx {
        scenario,
        link: scenario.link_model()?,
        tdd: scenario.tdd(),
        mode: scenario.harq_mode(),
        cqi: scenario.cqi_model(),
        inner_target: targets.inner_tber_target,
        re_per_prb: scenario.re_per_prb(),
        slot_ms,
        warmup_ms: scenario.warmup_fraction * scenario.horizon_ms,
        cqi_period_slots: ((scenario.channel.cqi_period_ms / slot_ms).round() as u64).max(1),
        traces,
    };
    let mut out = RunOutput { seed, ..RunOutput::default() };
    for cell in 0..scenario.cells {
        run_cell(&ctx, seed, cell, &mut out)?;
    }
    Ok(out)
}

fn build_ue(ctx: &Ctx, seed: u64, cell: usize, index: usize, out: &mut RunOutput) -> Result<Ue> {
    let s = ctx.scenario;
    let id = cell * s.ues_per_cell + index;
    let mut traffic_rng = ue_stream(seed, cell, index, UeStream::Traffic);
    let mut channel_rng = ue_stream(seed, cell, index, UeStream::Channel);
    let mut cqi_rng = ue_stream(seed, cell, index, UeStream::Cqi);
    let harq_rng = ue_stream(seed, cell, index, UeStream::Harq);

    let source = s.xr_source();
    let mut arrivals = generate_arrivals(id, &source, s.horizon_ms, &mut traffic_rng)?;
    if s.traffic.random_phase {
        let phase = traffic_rng.random::<f64>() * source.period_ms();
        for p in &mut arrivals {
            p.arrival_ms += phase;
            p.deadline_ms += phase;
        }
    }
    if ctx.traces.packet {
        out.packet_trace.extend(arrivals.iter().map(|p| PacketTraceRow {
            ue_id: p.ue_id,
            seq: p.seq,
            arrival_ms: p.arrival_ms,
            size_bits: p.size_bits,
            deadline_ms: p.deadline_ms,
        }));
    }
    let mut kpi = KpiRecord::new(id, ctx.link.table.len());
    let packets: Vec<Packet> = arrivals
        .into_iter()
        .map(|p| {
            let measured = p.arrival_ms >= ctx.warmup_ms;
            if measured {
                kpi.packets_total += 1;
            }
            Packet { unscheduled: p.size_bits, delivered: 0, outcome: None, measured, p }
        })
        .collect();

    let [lo, hi] = s.channel.geometry_db;
    let geometry = if hi > lo { channel_rng.random_range(lo..=hi) } else { lo };
    let sinr = SinrProcess::new(geometry, s.channel.fading_rho, s.channel.fading_std_db, &mut channel_rng);
    let mut channel = ChannelState {
        ue_id: id,
        true_sinr_db: sinr.current_db(),
        cqi_sinr_db: 0.0,
        last_report_ms: 0.0,
    };
    channel.cqi_sinr_db = ctx.cqi.report(&channel, &mut cqi_rng);

    Ok(Ue {
        id,
        sinr,
        channel,
        cqi_pipeline: VecDeque::new(),
        channel_rng,
        cqi_rng,
        harq_rng,
        olla: s.olla_state()?,
        packets,
        next_arrival: 0,
        first_open: 0,
        queue: VecDeque::new(),
        queued_bits: 0,
        procs: (0..s.harq.processes).map(|_| None).collect(),
        avg_tput: PF_INIT,
        kpi,
    })
}

fn run_cell(ctx: &Ctx, seed: u64, cell: usize, out: &mut RunOutput) -> Result<()> {
    let s = ctx.scenario;
    let mut ues = (0..s.ues_per_cell)
        .map(|i| build_ue(ctx, seed, cell, i, out))
        .collect::<Result<Vec<_>>>()?;
    let end_ms = ues
        .iter()
        .flat_map(|u| u.packets.iter().map(|p| p.p.deadline_ms))
        .fold(s.horizon_ms, f64::max)
        + ctx.slot_ms;
    let n_slots = (end_ms / ctx.slot_ms).ceil() as u64;
    let alpha = 1.0 / s.scheduler.pf_window_slots;

    for slot in 0..n_slots {
        let now = slot as f64 * ctx.slot_ms;
        for ue in &mut ues {
            update_channel(ctx, ue, slot, now);
            admit_arrivals(ue, now);
            process_feedback(ctx, ue, slot, now, out)?;
            expire(ue, now + ctx.slot_ms);
        }
        let mut served_bits = vec![0u64; ues.len()];
        if ctx.tdd.kind(slot) == SlotKind::Downlink {
            let used = schedule(ctx, &mut ues, slot, now, &mut served_bits, out)?;
            if now >= ctx.warmup_ms && now < s.horizon_ms {
                out.prb_load.push(f64::from(used) / f64::from(s.phy.prbs));
            }
        }
        for (ue, bits) in ues.iter_mut().zip(&served_bits) {
            ue.avg_tput = (1.0 - alpha) * ue.avg_tput + alpha * *bits as f64;
        }
    }

    for ue in ues {
        let mut c = Conservation { generated: ue.packets.len() as u64, ..Conservation::default() };
        for p in &ue.packets {
            match p.outcome {
                Some(PacketOutcome::OnTime) => c.on_time += 1,
                Some(PacketOutcome::Late) => c.late += 1,
                Some(PacketOutcome::Lost) => c.lost += 1,
                None => c.in_flight += 1,
            }
        }
        out.conservation.add(&c);
        let id = ue.id;
        if out.kpis.len() <= id {
            out.kpis.resize_with(id + 1, KpiRecord::default);
        }
        out.kpis[id] = ue.kpi;
    }
    Ok(())
}

fn update_channel(ctx: &Ctx, ue: &mut Ue, slot: u64, now: f64) {
    if slot > 0 {
        ue.channel.true_sinr_db = ue.sinr.step(&mut ue.channel_rng);
    }
    if slot.is_multiple_of(ctx.cqi_period_slots) {
        let report = ctx.cqi.report(&ue.channel, &mut ue.cqi_rng);
        ue.cqi_pipeline.push_back((now + ctx.scenario.channel.cqi_delay_ms, report));
    }
    while let Some(&(due, value)) = ue.cqi_pipeline.front() {
        if due > now + EPS_MS {
            break;
        }
        ue.channel.cqi_sinr_db = value;
        ue.channel.last_report_ms = due;
        ue.cqi_pipeline.pop_front();
    }
}

fn admit_arrivals(ue: &mut Ue, now: f64) {
    while ue.next_arrival < ue.packets.len() && ue.packets[ue.next_arrival].p.arrival_ms <= now + EPS_MS {
        let idx = ue.next_arrival;
        ue.queued_bits += ue.packets[idx].unscheduled;
        ue.queue.push_back(idx);
        ue.next_arrival += 1;
    }
}

fn process_feedback(ctx: &Ctx, ue: &mut Ue, slot: u64, now: f64, out: &mut RunOutput) -> Result<()> {
    let measured = now >= ctx.warmup_ms;
    for k in 0..ue.procs.len() {
        let Some(proc) = ue.procs[k].as_mut() else { continue };
        if !proc.awaiting || proc.feedback_slot > slot {
            continue;
        }
        proc.awaiting = false;
        let fb = &proc.feedback;
        if fb.process_id != proc.harq.process_id {
            return Err(Error::UnknownProcess { ue_id: ue.id, process_id: fb.process_id });
        }
        ue.olla.apply(fb);
        if measured {
            match fb.tx_index {
                1 => {
                    ue.kpi.first_tx_tb += 1;
                    ue.kpi.first_tx_tb_failed += u64::from(!fb.all_ack());
                    ue.kpi.first_tx_cbg_sent += u64::from(fb.transmitted.count());
                    ue.kpi.first_tx_cbg_failed += u64::from(fb.f());
                }
                2 => {
                    ue.kpi.second_tx_count += 1;
                    ue.kpi.second_tx_failed += u64::from(!fb.all_ack());
                }
                _ => {}
            }
        }
        if ctx.traces.offset {
            out.offset_trace.push(OffsetSample { time_ms: now, ue_id: ue.id, offset_db: ue.olla.offset_db });
        }
        if proc.harq.pending.is_empty() || proc.harq.is_exhausted() {
            ue.procs[k] = None;
        }
    }
    Ok(())
}

/// Packets that can no longer be delivered by the end of the current slot are late.
fn expire(ue: &mut Ue, slot_end: f64) {
    let mut i = ue.first_open;
    while i < ue.next_arrival {
        if ue.packets[i].outcome.is_none() && ue.packets[i].p.deadline_ms < slot_end - EPS_MS {
            ue.finalize(i, PacketOutcome::Late);
        }
        i += 1;
    }
    while ue.first_open < ue.next_arrival && ue.packets[ue.first_open].outcome.is_some() {
        ue.first_open += 1;
    }
}

fn pf_metric(ctx: &Ctx, ue: &Ue) -> f64 {
    ctx.bits_per_prb(ctx.new_data_mcs(ue)) / ue.avg_tput
}

fn by_metric(a: &(f64, usize, usize), b: &(f64, usize, usize)) -> std::cmp::Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
}

fn schedule(
    ctx: &Ctx,
    ues: &mut [Ue],
    slot: u64,
    now: f64,
    served_bits: &mut [u64],
    out: &mut RunOutput,
) -> Result<u32> {
    let total = ctx.scenario.phy.prbs;
    let mut free = total;
    let mut served = vec![false; ues.len()];
    let metrics: Vec<f64> = ues.iter().map(|u| pf_metric(ctx, u)).collect();

    // Retransmissions first.
    let mut retx: Vec<(f64, usize, usize)> = Vec::new();
    for (u, ue) in ues.iter_mut().enumerate() {
        for k in 0..ue.procs.len() {
            let Some(proc) = ue.procs[k].as_ref() else { continue };
            if proc.awaiting {
                continue;
            }
            if ue.all_finalized(&proc.harq.segments) {
                ue.procs[k] = None;
                continue;
            }
            retx.push((metrics[u], u, k));
        }
    }
    retx.sort_by(by_metric);
    for &(_, u, k) in &retx {
        if served[u] {
            continue;
        }
        let ue = &mut ues[u];
        let proc = ue.procs[k].as_mut().expect("candidate process exists");
        let need = proc.harq.retransmission_payload();
        if need > free {
            continue;
        }
        free -= need;
        served[u] = true;
        let bits: u64 = proc.feedback.nack.iter().map(|i| cbg_len(&proc.harq, i)).sum();
        served_bits[u] += bits;
        if now >= ctx.warmup_ms {
            ue.kpi.prb_used += u64::from(need);
        }
        transmit(ctx, ue, k, slot, now, out)?;
    }

    // New data in PF order.
    let mut order: Vec<(f64, usize, usize)> = ues
        .iter()
        .enumerate()
        .filter(|(u, ue)| !served[*u] && ue.queued_bits > 0 && ue.procs.iter().any(Option::is_none))
        .map(|(u, _)| (metrics[u], u, 0))
        .collect();
    order.sort_by(by_metric);
    for &(_, u, _) in &order {
        if free == 0 {
            break;
        }
        let ue = &mut ues[u];
        let mcs = ctx.new_data_mcs(ue);
        let bpp = ctx.bits_per_prb(mcs);
        let need = ((ue.queued_bits as f64 / bpp).ceil() as u32).clamp(1, free);
        let tb_bits = ue.queued_bits.min((f64::from(need) * bpp).floor() as u64);
        if tb_bits == 0 {
            continue;
        }
        let segments = take_segments(ue, tb_bits);
        let k = ue.procs.iter().position(Option::is_none).expect("free process checked");
        let process_id = ue.id * ctx.scenario.harq.processes + k;
        let layout = ctx.mode.layout(tb_bits)?;
        let mut harq =
            HarqProcess::new(process_id, ue.id, layout, mcs, need, bpp, segments, ctx.scenario.max_tx());
        harq.chase_combining = ctx.scenario.link.chase_combining;
        ue.procs[k] = Some(Proc {
            feedback: CbgFeedback {
                process_id,
                tx_index: 0,
                m: harq.layout.m,
                transmitted: CbgMask::EMPTY,
                nack: CbgMask::EMPTY,
            },
            harq,
            feedback_slot: slot,
            awaiting: false,
        });
        free -= need;
        served[u] = true;
        served_bits[u] += tb_bits;
        if now >= ctx.warmup_ms {
            ue.kpi.prb_used += u64::from(need);
            ue.kpi.mcs_histogram[mcs] += 1;
        }
        transmit(ctx, ue, k, slot, now, out)?;
    }
    Ok(total - free)
}

fn cbg_len(harq: &HarqProcess, i: usize) -> u64 {
    let (a, b) = harq.layout.cbg_range(i);
    b - a
}

/// Move `tb_bits` from the head of the queue into TB segments.
fn take_segments(ue: &mut Ue, tb_bits: u64) -> Vec<PacketSegment> {
    let mut segments = Vec::new();
    let mut offset = 0u64;
    while offset < tb_bits {
        let Some(&idx) = ue.queue.front() else { break };
        let pkt = &mut ue.packets[idx];
        if pkt.unscheduled == 0 {
            ue.queue.pop_front();
            continue;
        }
        let bits = pkt.unscheduled.min(tb_bits - offset);
        pkt.unscheduled -= bits;
        ue.queued_bits -= bits;
        segments.push(PacketSegment { packet: idx, tb_offset: offset, bits });
        offset += bits;
        if pkt.unscheduled == 0 {
            ue.queue.pop_front();
        }
    }
    segments
}

fn transmit(ctx: &Ctx, ue: &mut Ue, k: usize, slot: u64, now: f64, out: &mut RunOutput) -> Result<()> {
    let sinr = ue.channel.true_sinr_db;
    let slot_end = now + ctx.slot_ms;
    let proc = ue.procs[k].as_mut().expect("process exists");
    let fb = proc.harq.draw_outcome(sinr, &ctx.link, &mut ue.harq_rng)?;
    proc.feedback_slot = ctx.tdd.feedback_slot(
        slot,
        ctx.scenario.phy.symbols_per_slot,
        ctx.scenario.phy.processing_delay_symbols,
    );
    proc.awaiting = true;
    if ctx.traces.harq {
        out.harq_trace.push(HarqTraceRow {
            process_id: fb.process_id,
            tx_index: fb.tx_index,
            mcs: proc.harq.mcs_index,
            pending_bitmap: fb.transmitted.to_bit_string(fb.m),
            sinr_db: sinr,
            outcome_bitmap: fb.nack.to_bit_string(fb.m),
        });
    }

    let mut credits: Vec<(usize, u64)> = Vec::new();
    for i in fb.newly_acked().iter() {
        overlaps(&proc.harq, i, |pkt, bits| credits.push((pkt, bits)));
    }
    let mut lost: Vec<usize> = Vec::new();
    if let Some(loss) = proc.harq.residual_failure() {
        for i in loss.pending.iter() {
            overlaps(&proc.harq, i, |pkt, _| lost.push(pkt));
        }
    }
    proc.feedback = fb;

    for (idx, bits) in credits {
        let pkt = &mut ue.packets[idx];
        pkt.delivered += bits;
        if pkt.delivered == pkt.p.size_bits && pkt.outcome.is_none() {
            let on_time = slot_end <= pkt.p.deadline_ms + EPS_MS;
            if pkt.measured {
                ue.kpi.delay_samples_ms.push(slot_end - pkt.p.arrival_ms);
            }
            ue.finalize(idx, if on_time { PacketOutcome::OnTime } else { PacketOutcome::Late });
        }
    }
    for idx in lost {
        ue.finalize(idx, PacketOutcome::Lost);
    }
    Ok(())
}

/// Call `f(packet, bits)` for every packet slice overlapping CBG `i`.
fn overlaps(harq: &HarqProcess, i: usize, mut f: impl FnMut(usize, u64)) {
    let (a, b) = harq.layout.cbg_range(i);
    for seg in &harq.segments {
        let lo = a.max(seg.tb_offset);
        let hi = b.min(seg.tb_offset + seg.bits);
        if hi > lo {
            f(seg.packet, hi - lo);
        }
    }
}
