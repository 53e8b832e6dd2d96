use mas_sentinel::config::RunConfig;
use mas_sentinel::pipeline::run_trace;
use mas_sentinel::simulator::*;
use std::io::Cursor;

fn main() {
    let cfg = ScenarioConfig {
        name: None,
        topology: TopologyKind::Decentralized,
        agent_count: 6,
        turns: 64,
        attack: AttackKind::Intent,
        injection_turn: 46,
        profile: StrengthProfile::Gradual,
        regime: Regime::Easy,
        strength: None,
        seed: 42,
        count: None,
    };
    let trace = generate_trace(&cfg).unwrap();
    let run = run_trace(Cursor::new(trace.lines.join("\n")), RunConfig::default()).unwrap();
    for r in &run.records {
        println!(
            "t={:2} l1={:.4} l2={:.4} amp={:9.3} dg={:+.4} watch={} phase={} cross={} H={:.3} ev={:?} B={:.3} wbar={:.3}",
            r.turn, r.signals.lambda1, r.signals.lambda2, r.signals.amp.min(9999.0),
            r.signals.gap_contraction, r.watch as u8, r.signals.phase_shift as u8,
            r.signals.cross_channel as u8, r.signals.entropy_norm, r.event, r.bottleneck, r.energy_scale
        );
    }
}
