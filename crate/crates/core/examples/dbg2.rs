use mas_sentinel::encoder::{Encoder, EncoderConfig};
use mas_sentinel::estimator::{EstimatorConfig, InfluenceEstimator};
use mas_sentinel::simulator::*;
use mas_sentinel::topology::SystemTopology;
use mas_sentinel::trace::{normalize_turn, parse_event_line, parse_header_line};

fn main() {
    let cfg = ScenarioConfig {
        name: None,
        topology: TopologyKind::Decentralized,
        agent_count: 6,
        turns: 64,
        attack: AttackKind::None,
        injection_turn: 46,
        profile: StrengthProfile::Gradual,
        regime: Regime::Easy,
        strength: None,
        seed: 42,
        count: None,
    };
    let trace = generate_trace(&cfg).unwrap();
    let header = parse_header_line(&trace.lines[0]).unwrap();
    let topo = SystemTopology::new(header.roster.len(), header.edges.iter().copied()).unwrap();
    let enc = Encoder::new(EncoderConfig::default());
    let mut est = InfluenceEstimator::new(EstimatorConfig::default(), 32, 6, 0);
    let mut by_turn: std::collections::BTreeMap<u64, Vec<_>> = Default::default();
    for line in &trace.lines[1..] {
        let ev = parse_event_line(line, &header).unwrap();
        by_turn.entry(ev.turn).or_default().push(ev);
    }
    for (turn, events) in by_turn {
        let batch = normalize_turn(turn, &events, &topo, &enc);
        let scores = est.process_batch(&batch, &topo).unwrap();
        let nz: Vec<_> = scores.iter().filter(|(_, &s)| s > 0.0).collect();
        if !nz.is_empty() {
            println!("turn {turn}: {} nonzero of {}", nz.len(), scores.len());
            for ((i, j, c), s) in nz.iter().take(8) {
                println!("   ({i},{j},{c:?}) = {s:.4}");
            }
        }
    }
}
