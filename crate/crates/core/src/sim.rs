//! Event-driven delta-cycle scheduler.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::Serialize;

use crate::design::{Body, Design, NativeFn, ProcKind};
use crate::error::{Error, Result};
use crate::exec::{Exec, Kernel, ProcCtx};
use crate::signals::{Logic, NodeId, ProcessId, Storage, Value};
use crate::vcd::Trace;

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub delta_limit: usize,
    /// Include handler and process variables in the trace.
    pub trace_variables: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            delta_limit: 1000,
            trace_variables: false,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SimReport {
    pub ticks: u64,
    pub final_values: BTreeMap<String, serde_json::Value>,
    pub activations: BTreeMap<String, u64>,
    pub total_deltas: u64,
    pub max_deltas_per_tick: usize,
    /// Value changes of traced leaves after time zero (one per VCD change line).
    pub committed_changes: u64,
}

pub struct Simulator {
    d: Design,
    k: Kernel,
    natives: Vec<Option<NativeFn>>,
    cfg: SimConfig,
    now: u64,
    comb_subs: BTreeMap<NodeId, Vec<ProcessId>>,
    edge_subs: BTreeMap<NodeId, Vec<ProcessId>>,
    clocks: Vec<(NodeId, u64)>,
    activations: Vec<u64>,
    total_deltas: u64,
    max_deltas: usize,
    recent: VecDeque<BTreeSet<NodeId>>,
    trace: Option<Trace>,
}

impl Simulator {
    pub fn new(mut d: Design, cfg: SimConfig) -> Result<Simulator> {
        d.check_ready()?;
        let natives = std::mem::take(&mut d.natives);
        let k = Kernel::new(&d);
        let mut comb_subs: BTreeMap<NodeId, Vec<ProcessId>> = BTreeMap::new();
        let mut edge_subs: BTreeMap<NodeId, Vec<ProcessId>> = BTreeMap::new();
        for p in &d.processes {
            match p.kind {
                ProcKind::RisingEdge(clk) => edge_subs.entry(k.root_of(clk)).or_default().push(p.id),
                ProcKind::Combinational => {
                    for n in &p.captured {
                        let subs = comb_subs.entry(k.root_of(*n)).or_default();
                        if !subs.contains(&p.id) {
                            subs.push(p.id);
                        }
                    }
                }
            }
        }
        let mut clocks = Vec::new();
        for e in &d.entities {
            if let Some(period) = e.clock_period {
                let clk = d.port_node(e.id, "clk")?;
                clocks.push((k.root_of(clk), period / 2));
            }
        }
        let activations = vec![0; d.processes.len()];
        Ok(Simulator {
            d,
            k,
            natives,
            cfg,
            now: 0,
            comb_subs,
            edge_subs,
            clocks,
            activations,
            total_deltas: 0,
            max_deltas: 0,
            recent: VecDeque::new(),
            trace: None,
        })
    }

    pub fn design(&self) -> &Design {
        &self.d
    }

    /// Starts recording traced leaves for VCD output. Must precede the first tick.
    pub fn enable_trace(&mut self) -> Result<()> {
        if self.now != 0 {
            return Err(Error::State("tracing must start before the first tick".into()));
        }
        self.trace = Some(Trace::new(&self.d, &self.k, self.cfg.trace_variables)?);
        Ok(())
    }

    pub fn trace(&self) -> Option<&Trace> {
        self.trace.as_ref()
    }

    /// Number of ticks simulated so far.
    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn value(&self, n: NodeId) -> &Value {
        self.k.value(n)
    }

    pub fn value_u128(&self, n: NodeId) -> Option<u128> {
        self.k.value(n).as_u128()
    }

    pub fn activation_count(&self, p: ProcessId) -> u64 {
        self.activations[p.index()]
    }

    /// Whether no commits are outstanding.
    pub fn is_quiescent(&self) -> bool {
        self.k.dirty.is_empty()
    }

    /// One commit + activation round. Returns the alias roots whose
    /// committed value changed.
    pub fn step_delta(&mut self) -> Result<BTreeSet<NodeId>> {
        let dirty = std::mem::take(&mut self.k.dirty);
        let mut changed = BTreeSet::new();
        let mut queue = BTreeSet::new();
        for n in dirty {
            let node = &mut self.k.nodes[n.index()];
            let old = node.current.clone();
            if node.commit() {
                changed.insert(n);
                if let Some(subs) = self.comb_subs.get(&n) {
                    queue.extend(subs.iter().copied());
                }
                let rising = old == Value::Logic(Logic::Zero) && node.current == Value::Logic(Logic::One);
                if rising {
                    if let Some(subs) = self.edge_subs.get(&n) {
                        queue.extend(subs.iter().copied());
                    }
                }
            }
        }
        for p in queue {
            self.activate(p)?;
        }
        Ok(changed)
    }

    fn activate(&mut self, pid: ProcessId) -> Result<()> {
        self.activations[pid.index()] += 1;
        let p = &self.d.processes[pid.index()];
        let mut ex = Exec::new(&self.d, &mut self.k);
        for h in &p.handlers {
            ex.pull(*h)?;
        }
        match &p.body {
            Body::Tree(stmts) => ex.run(stmts, p.self_handler)?,
            Body::Native(i) => {
                let f = self.natives[*i]
                    .as_mut()
                    .ok_or_else(|| Error::State("native process body missing".into()))?;
                let mut ctx = ProcCtx { ex };
                f(&mut ctx)?;
                ex = ctx.ex;
            }
        }
        for h in &p.handlers {
            ex.push(*h)?;
        }
        Ok(())
    }

    fn settle(&mut self) -> Result<()> {
        let mut deltas = 0usize;
        self.recent.clear();
        loop {
            let changed = self.step_delta()?;
            if changed.is_empty() {
                break;
            }
            deltas += 1;
            self.recent.push_back(changed);
            if self.recent.len() > 3 {
                self.recent.pop_front();
            }
            if deltas >= self.cfg.delta_limit {
                let mut nodes: BTreeSet<String> = BTreeSet::new();
                for set in &self.recent {
                    for n in set {
                        nodes.insert(self.d.node_path(*n));
                    }
                }
                return Err(Error::Oscillation {
                    tick: self.now,
                    deltas,
                    nodes: nodes.into_iter().collect(),
                });
            }
        }
        self.total_deltas += deltas as u64;
        self.max_deltas = self.max_deltas.max(deltas);
        Ok(())
    }

    /// Simulates one tick: clock update, then delta cycles until quiescent.
    pub fn tick(&mut self) -> Result<()> {
        if self.now == 0 {
            let comb: Vec<ProcessId> = self
                .d
                .processes
                .iter()
                .filter(|p| p.kind == ProcKind::Combinational)
                .map(|p| p.id)
                .collect();
            for p in comb {
                self.activate(p)?;
            }
        } else {
            for &(clk, half) in &self.clocks {
                let level = (self.now / half) % 2 == 1;
                self.k.drive(clk, &[], Value::from(level))?;
            }
        }
        self.settle()?;
        if let Some(t) = &mut self.trace {
            t.sample(self.now, &self.k);
        }
        self.now += 1;
        Ok(())
    }

    pub fn run(&mut self, ticks: u64) -> Result<()> {
        for _ in 0..ticks {
            self.tick()?;
        }
        Ok(())
    }

    /// Runs until `n` more rising edges of the default clock have been processed
    /// (two ticks per cycle), starting with time zero if needed.
    pub fn run_cycles(&mut self, n: u64) -> Result<()> {
        self.run(n * 2)
    }

    pub fn report(&self) -> SimReport {
        let mut final_values = BTreeMap::new();
        for (i, n) in self.d.nodes.iter().enumerate() {
            let id = NodeId(i as u32);
            let traced = self.d.meta[i].trace || self.cfg.trace_variables;
            if n.storage == Storage::Variable && !self.cfg.trace_variables || !traced {
                continue;
            }
            final_values.insert(self.d.node_path(id), value_json(self.k.value(id)));
        }
        let activations = self
            .d
            .processes
            .iter()
            .map(|p| (self.d.process_path(p.id), self.activations[p.id.index()]))
            .collect();
        SimReport {
            ticks: self.now,
            final_values,
            activations,
            total_deltas: self.total_deltas,
            max_deltas_per_tick: self.max_deltas,
            committed_changes: self.trace.as_ref().map_or(0, |t| t.change_count()),
        }
    }
}

pub fn value_json(v: &Value) -> serde_json::Value {
    use serde_json::Value as J;
    match v {
        Value::Logic(l) => J::String(l.vcd_char().to_string()),
        Value::Vector { bits, .. } => match u64::try_from(*bits) {
            Ok(x) => J::from(x),
            Err(_) => J::String(format!("0x{bits:x}")),
        },
        Value::Integer(i) => J::from(*i),
        Value::Boolean(b) => J::Bool(*b),
        Value::Record(vs) | Value::Array(vs) => J::Array(vs.iter().map(value_json).collect()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus;
    use crate::design::{Entity, Scope};
    use crate::signals::TypeDesc;
    use crate::stmt::{drive, e};

    struct Tb<F: Fn(&mut Scope<'_>) -> Result<()> + Send + 'static>(F);

    impl<F: Fn(&mut Scope<'_>) -> Result<()> + Send + 'static> Entity for Tb<F> {
        fn type_name(&self) -> String {
            "tb".into()
        }
        fn ports(&self, _p: &mut Scope<'_>) -> Result<()> {
            Ok(())
        }
        fn architecture(&self, a: &mut Scope<'_>) -> Result<()> {
            (self.0)(a)
        }
    }

    fn sim(d: Design) -> Simulator {
        Simulator::new(d, SimConfig::default()).unwrap()
    }

    #[test]
    fn corpus_designs_simulate() {
        for name in corpus::DESIGNS {
            let mut s = sim(corpus::build(name).unwrap());
            s.enable_trace().unwrap();
            s.run_cycles(50).unwrap_or_else(|err| panic!("{name}: {err}"));
        }
    }

    #[test]
    fn counter_counts_edges() {
        let mut s = sim(corpus::build("first_test_bench").unwrap());
        let counter = s.design().find_node("my_first_test_bench/counter").unwrap();
        s.tick().unwrap();
        for n in 1..=5u128 {
            s.run_cycles(1).unwrap();
            assert_eq!(s.value_u128(counter), Some(n));
        }
    }

    #[test]
    fn zero_ticks_report_has_initial_values() {
        let s = sim(corpus::build("first_test_bench").unwrap());
        let r = s.report();
        assert_eq!(r.ticks, 0);
        assert!(r.activations.values().all(|&n| n == 0));
        assert_eq!(r.final_values["my_first_test_bench/max_cnt"], serde_json::json!(300));
    }

    #[test]
    fn u_to_one_is_not_an_edge() {
        let d = Design::elaborate(Tb(|a| {
            let clk = a.signal("clk", TypeDesc::Logic, None)?;
            let one = a.signal("one", TypeDesc::Logic, Some(Value::one()))?;
            let n = a.vector("n", 8, 0)?;
            a.combinational("src", vec![drive(clk, one)])?;
            a.on_rising_edge("p", clk, vec![drive(n, e(n) + 1)])?;
            a.end_architecture()
        }))
        .unwrap();
        let mut s = sim(d);
        s.run(4).unwrap();
        let clk = s.design().find_node("tb/clk").unwrap();
        let n = s.design().find_node("tb/n").unwrap();
        assert_eq!(s.value(clk), &Value::one());
        assert_eq!(s.value_u128(n), Some(0));
    }

    #[test]
    fn chain_settles_in_two_deltas() {
        let d = Design::elaborate(Tb(|a| {
            let clk = a.signal("clk", TypeDesc::Logic, Some(Value::zero_bit()))?;
            let x = a.vector("x", 8, 0)?;
            let b = a.vector("b", 8, 0)?;
            let c = a.vector("c", 8, 0)?;
            a.on_rising_edge("p", clk, vec![drive(x, e(x) + 1)])?;
            a.combinational("ab", vec![drive(b, x)])?;
            a.combinational("bc", vec![drive(c, b)])?;
            a.end_architecture()
        }))
        .unwrap();
        let mut s = sim(d);
        s.tick().unwrap();
        let x = s.design().find_node("tb/x").unwrap();
        s.k.drive(x, &[], Value::vector(8, 7).unwrap()).unwrap();
        let b = s.design().find_node("tb/b").unwrap();
        let c = s.design().find_node("tb/c").unwrap();
        assert_eq!(s.step_delta().unwrap(), BTreeSet::from([x]));
        assert_eq!(s.step_delta().unwrap(), BTreeSet::from([b]));
        assert_eq!(s.step_delta().unwrap(), BTreeSet::from([c]));
        assert!(s.step_delta().unwrap().is_empty());
        assert_eq!(s.value_u128(c), Some(7));
    }

    #[test]
    fn no_pending_commits_changes_nothing() {
        let mut s = sim(corpus::build("first_test_bench").unwrap());
        s.run(3).unwrap();
        assert!(s.is_quiescent());
        assert!(s.step_delta().unwrap().is_empty());
    }

    #[test]
    fn oscillation_is_reported() {
        let d = Design::elaborate(Tb(|a| {
            let x = a.signal("x", TypeDesc::Logic, Some(Value::zero_bit()))?;
            let y = a.signal("y", TypeDesc::Logic, Some(Value::zero_bit()))?;
            a.combinational("fwd", vec![drive(y, !e(x))])?;
            a.combinational("back", vec![drive(x, y)])?;
            a.end_architecture()
        }))
        .unwrap();
        let mut s = sim(d);
        match s.run(1) {
            Err(Error::Oscillation { deltas, nodes, .. }) => {
                assert_eq!(deltas, 1000);
                assert!(
                    nodes.contains(&"tb/x".to_string()) && nodes.contains(&"tb/y".to_string()),
                    "{nodes:?}"
                );
            }
            other => panic!("expected oscillation, got {other:?}"),
        }
    }
}
