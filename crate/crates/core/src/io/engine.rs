//! Offline verdict engine on a virtual clock.

use crate::attack::{AttackStats, Censor, CensorConfig};
use crate::error::ConfigError;
use crate::flowtable::FlaggedFlow;
use crate::packet::{Packet, Verdict};

use super::pcap::Trace;

#[derive(Debug, Clone)]
pub struct OfflineRun {
    pub output: Trace,
    pub stats: AttackStats,
    pub flagged: Vec<FlaggedFlow>,
}

/// Apply one verdict list (in processing order) to build the output trace.
fn emit(input: &Trace, order: &[usize], verdicts: &[Verdict]) -> Trace {
    let mut packets: Vec<Packet> = Vec::with_capacity(order.len());
    for (&i, v) in order.iter().zip(verdicts) {
        let p = &input.packets[i];
        match *v {
            Verdict::Drop => {}
            Verdict::Pass => packets.push(p.clone()),
            Verdict::Delay(ms) => {
                let mut q = p.clone();
                q.timestamp = q.timestamp.plus_millis(u64::from(ms));
                packets.push(q);
            }
        }
    }
    packets.sort_by_key(|p| (p.timestamp, p.original_index));
    Trace { header: input.header, packets }
}

/// Input positions in processing order: by timestamp, ties by capture order.
fn processing_order(trace: &Trace) -> Vec<usize> {
    let mut order: Vec<usize> = (0..trace.packets.len()).collect();
    order.sort_by_key(|&i| (trace.packets[i].timestamp, trace.packets[i].original_index));
    order
}

/// Run the censor over a trace on one thread.
pub fn run_offline(trace: &Trace, cfg: &CensorConfig) -> Result<OfflineRun, ConfigError> {
    cfg.validate()?;
    let order = processing_order(trace);
    let mut censor = Censor::new(cfg);
    let verdicts: Vec<Verdict> = order.iter().map(|&i| censor.process(&trace.packets[i])).collect();
    let flagged = censor.flagged();
    Ok(OfflineRun { output: emit(trace, &order, &verdicts), stats: censor.into_stats(), flagged })
}

/// Run the censor with flows sharded across `workers` threads by flow-table
/// partition. Results are identical to [`run_offline`].
pub fn run_offline_sharded(trace: &Trace, cfg: &CensorConfig, workers: usize) -> Result<OfflineRun, ConfigError> {
    cfg.validate()?;
    let workers = workers.clamp(1, cfg.table.partitions);
    if workers == 1 {
        return run_offline(trace, cfg);
    }
    let order = processing_order(trace);
    let partitions = cfg.table.partitions as u64;
    // packets without a flow share one global state and stay on shard 0
    let shard_of = |p: &Packet| p.flow.map_or(0, |f| ((f.canonical().stable_hash() % partitions) as usize) % workers);
    let mut shards: Vec<Vec<usize>> = vec![Vec::new(); workers];
    for (pos, &i) in order.iter().enumerate() {
        shards[shard_of(&trace.packets[i])].push(pos);
    }
    let results: Vec<(Vec<(usize, Verdict)>, AttackStats, Vec<FlaggedFlow>)> = std::thread::scope(|s| {
        let handles: Vec<_> = shards
            .iter()
            .map(|positions| {
                let order = &order;
                s.spawn(move || {
                    let mut censor = Censor::new(cfg);
                    let out: Vec<(usize, Verdict)> =
                        positions.iter().map(|&pos| (pos, censor.process(&trace.packets[order[pos]]))).collect();
                    let flagged = censor.flagged();
                    (out, censor.into_stats(), flagged)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("shard worker panicked")).collect()
    });
    let mut verdicts = vec![Verdict::Pass; order.len()];
    let mut stats = AttackStats::default();
    let mut flagged = Vec::new();
    for (out, st, fl) in results {
        for (pos, v) in out {
            verdicts[pos] = v;
        }
        stats.merge(&st);
        flagged.extend(fl);
    }
    flagged.sort_by_key(|f| f.flow);
    Ok(OfflineRun { output: emit(trace, &order, &verdicts), stats, flagged })
}
