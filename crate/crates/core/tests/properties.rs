mod common;

use std::collections::{BTreeSet, VecDeque};
use std::sync::{Arc, Mutex};

use hdlkit::classes::{protocols, ClassRegistry};
use hdlkit::corpus::{StreamDelayOne, StreamHarness, WordSink, WordSource};
use hdlkit::design::{ClockGenerator, Design, Entity, Scope, Stage};
use hdlkit::export;
use hdlkit::signals::{self, reset_value, TypeDesc, Value};
use hdlkit::sim::{SimConfig, Simulator};
use hdlkit::stmt::{drive, e};
use hdlkit::{Error, Result};
use proptest::prelude::*;

use common::Tb;

fn mask(w: u32) -> u128 {
    if w == 128 {
        u128::MAX
    } else {
        (1u128 << w) - 1
    }
}

fn run_stream<E: Entity>(dut: E, words: &[u32], valid_prob: f64, ready_prob: f64, seed: u64) -> Vec<u32> {
    let log = Arc::new(Mutex::new(Vec::new()));
    let harness = StreamHarness::new(
        dut,
        WordSource {
            words: Arc::new(Mutex::new(words.iter().copied().collect::<VecDeque<_>>())),
            valid_prob,
            seed,
        },
        WordSink {
            log: log.clone(),
            ready_prob,
            seed: seed.wrapping_add(1),
        },
    );
    let mut s = Simulator::new(Design::elaborate(harness).unwrap(), SimConfig::default()).unwrap();
    let cap = 100 + 50 * words.len() as u64;
    let mut cycles = 0;
    while log.lock().unwrap().len() < words.len() && cycles < cap {
        s.run_cycles(1).unwrap();
        cycles += 1;
    }
    let out = log.lock().unwrap().clone();
    out
}

/// Three one-cycle stages between `D_In` and `D_Out`, grouped to the left
/// or to the right.
struct ThreeStage {
    left: bool,
}

impl Entity for ThreeStage {
    fn type_name(&self) -> String {
        "three_stage".into()
    }
    fn ports(&self, p: &mut Scope<'_>) -> Result<()> {
        p.clock_in()?;
        let t = hdlkit::design::axi_stream_of(p, TypeDesc::Vector(32))?;
        p.pipeline_in("D_In", t)?;
        p.pipeline_out("D_Out", t)?;
        Ok(())
    }
    fn architecture(&self, a: &mut Scope<'_>) -> Result<()> {
        let clk = a.clk()?;
        let d_in = a.own_bundle("D_In")?;
        let d_out = a.own_bundle("D_Out")?;
        let s1 = a.instantiate_clocked("s1", StreamDelayOne, clk)?;
        let s2 = a.instantiate_clocked("s2", StreamDelayOne, clk)?;
        let s3 = a.instantiate_clocked("s3", StreamDelayOne, clk)?;
        let body: Stage = if self.left {
            let ab = a.pipe(s1, s2)?;
            a.pipe(ab, s3)?
        } else {
            let bc = a.pipe(s2, s3)?;
            a.pipe(s1, bc)?
        };
        let head = a.pipe(d_in, body)?;
        a.pipe(head, d_out)?;
        a.end_architecture()
    }
}

fn edge_set(d: &Design) -> BTreeSet<(String, String)> {
    export::graph(d)
        .unwrap()
        .edges
        .into_iter()
        .map(|e| (e.from, e.to))
        .collect()
}

fn small_type() -> impl Strategy<Value = TypeDesc> {
    let leaf = prop_oneof![Just(TypeDesc::Logic), (1u32..=64).prop_map(TypeDesc::Vector),];
    leaf.prop_recursive(2, 8, 3, |inner| {
        prop_oneof![
            (inner.clone(), 1u32..5).prop_map(|(t, n)| TypeDesc::array(t, n).unwrap()),
            inner.prop_map(TypeDesc::optional),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn vector_arithmetic_wraps(w in 1u32..=128, a in any::<u128>(), b in any::<u128>()) {
        let (a, b) = (a & mask(w), b & mask(w));
        let (x, y) = (Value::vector(w, a).unwrap(), Value::vector(w, b).unwrap());
        prop_assert_eq!(signals::add(&x, &y).unwrap().as_u128(), Some(a.wrapping_add(b) & mask(w)));
        prop_assert_eq!(signals::sub(&x, &y).unwrap().as_u128(), Some(a.wrapping_sub(b) & mask(w)));
    }

    #[test]
    fn out_of_range_literals_are_rejected(w in 1u32..=64, v in any::<u64>()) {
        let fits = (v as u128) <= mask(w);
        match Value::vector(w, v as u128) {
            Ok(x) => prop_assert!(fits && x.as_u128() == Some(v as u128)),
            Err(err) => {
                let is_range = matches!(err, Error::Range { .. });
                prop_assert!(!fits && is_range);
            }
        }
    }

    #[test]
    fn signals_lag_variables_by_one_commit(k in 1i64..50, n in 1u64..40) {
        let d = Design::elaborate(Tb(move |a: &mut Scope<'_>| {
            let clkgen = a.instantiate("clkgen", ClockGenerator::default())?;
            let clk = a.port_node(clkgen, "clk")?;
            let v = a.variable("v", TypeDesc::Vector(16), None)?;
            let from_var = a.vector("from_var", 16, 0)?;
            let s = a.vector("s", 16, 0)?;
            let from_sig = a.vector("from_sig", 16, 0)?;
            a.on_rising_edge(
                "p",
                clk,
                vec![
                    drive(v, e(v) + k),
                    drive(from_var, v),
                    drive(s, e(s) + k),
                    drive(from_sig, s),
                ],
            )?;
            a.end_architecture()
        }))
        .unwrap();
        let mut sim = Simulator::new(d, SimConfig::default()).unwrap();
        sim.run_cycles(n).unwrap();
        let get = |p: &str| sim.value_u128(sim.design().find_node(p).unwrap()).unwrap();
        let k = k as u128;
        let n = n as u128;
        prop_assert_eq!(get("tb/from_var"), (n * k) & 0xffff);
        prop_assert_eq!(get("tb/s"), (n * k) & 0xffff);
        prop_assert_eq!(get("tb/from_sig"), ((n - 1) * k) & 0xffff);
    }

    #[test]
    fn optional_reset_is_idempotent_and_keeps_data(w in 1u32..=64, data in any::<u64>(), valid in any::<bool>()) {
        let ty = TypeDesc::optional(TypeDesc::Vector(w));
        let payload = Value::vector_wrapping(w, data as u128);
        let v = Value::Record(vec![payload.clone(), if valid { Value::one() } else { Value::zero_bit() }]);
        let once = reset_value(&ty, &v);
        prop_assert_eq!(&reset_value(&ty, &once), &once);
        prop_assert_eq!(once, Value::Record(vec![payload, Value::zero_bit()]));
    }

    #[test]
    fn plain_reset_is_zero(w in 1u32..=64, data in any::<u64>()) {
        let ty = TypeDesc::Vector(w);
        let once = reset_value(&ty, &Value::vector_wrapping(w, data as u128));
        prop_assert_eq!(&once, &Value::zero_for(&ty));
        prop_assert_eq!(reset_value(&ty, &once), once);
    }

    #[test]
    fn v_switch_takes_first_true_case(default in any::<u8>(), cases in prop::collection::vec((any::<bool>(), any::<u8>()), 0..6)) {
        let v = |x: u8| Value::vector(8, x as u128).unwrap();
        let got = signals::v_switch(v(default), &cases.iter().map(|(c, x)| (*c, v(*x))).collect::<Vec<_>>()).unwrap();
        let want = cases.iter().find(|(c, _)| *c).map_or(default, |(_, x)| *x);
        prop_assert_eq!(got, v(want));
    }

    #[test]
    fn monomorphization_is_injective(a in small_type(), b in small_type()) {
        prop_assert_eq!(a == b, a.mangle() == b.mangle());
        let mut r = ClassRegistry::default();
        let (ca, cb) = (protocols::axi_stream(&mut r, a.clone()), protocols::axi_stream(&mut r, b.clone()));
        if let (Ok(ca), Ok(cb)) = (ca, cb) {
            prop_assert_eq!(ca == cb, a == b);
            prop_assert_eq!(r.interface(ca).name == r.interface(cb).name, a == b);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn handshakes_are_lossless(
        words in prop::collection::vec(any::<u32>(), 1..40),
        valid_prob in 0.2f64..=1.0,
        ready_prob in 0.2f64..=1.0,
        seed in any::<u64>(),
    ) {
        let out = run_stream(StreamDelayOne, &words, valid_prob, ready_prob, seed);
        prop_assert_eq!(out, words);
    }

    #[test]
    fn pipe_grouping_does_not_matter(words in prop::collection::vec(any::<u32>(), 1..30), ready_prob in 0.3f64..=1.0, seed in any::<u64>()) {
        let left = run_stream(ThreeStage { left: true }, &words, 1.0, ready_prob, seed);
        let right = run_stream(ThreeStage { left: false }, &words, 1.0, ready_prob, seed);
        prop_assert_eq!(&left, &words);
        prop_assert_eq!(left, right);
    }
}

#[test]
fn pipe_grouping_gives_the_same_netlist() {
    let l = Design::elaborate(ThreeStage { left: true }).unwrap();
    let r = Design::elaborate(ThreeStage { left: false }).unwrap();
    assert_eq!(edge_set(&l), edge_set(&r));
    assert!(edge_set(&l).contains(&("three_stage/s1.Axi_out".into(), "three_stage/s2.Axi_in".into())));
}
