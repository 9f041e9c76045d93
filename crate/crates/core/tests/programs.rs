use edge_core::engine::RunLimits;
use edge_core::gen::random_graph;
use edge_core::operators::OperatorRegistry;
use edge_core::parser::{parse, pretty_print};
use edge_core::stdlib::{get_program, list_programs, verify, Pairing};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn every_builtin_survives_a_print_round_trip() {
    for (name, _) in list_programs() {
        let p = get_program(name).unwrap().program();
        let text = pretty_print(&p);
        assert_eq!(parse(&text).unwrap(), p, "{name}");
    }
}

#[test]
fn paired_builtins_match_their_oracles() {
    let reg = OperatorRegistry::builtin();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut checked = 0;
    for (name, _) in list_programs() {
        let np = get_program(name).unwrap();
        if matches!(np.pairing, Pairing::None) {
            continue;
        }
        for _ in 0..10 {
            let n = rng.gen_range(1..=24);
            let mut g = random_graph(&mut rng, n, 0.15, 1..=9);
            if matches!(np.pairing, Pairing::Cc { .. }) {
                g = g.symmetrized();
            }
            let source = rng.gen_range(0..n);
            let v = verify(&np, &g, &[source], RunLimits::default(), &reg).unwrap();
            assert!(v.is_pass(), "{name} on {n} vertices from {source}: {v:?}");
            checked += 1;
        }
    }
    assert!(checked >= 80, "only {checked} runs");
}
