//! Reference designs: the counter test benches, the AXI4-Stream chain, the
//! two-stage pipeline delay, the native FIFO reader and the `optional_t`
//! test bench, plus host-driven stimulus entities used by tests and the
//! co-simulation bridge.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::design::{axi_stream_of, native_fifo_of, ClockGenerator, Design, Entity, NativeDecl, Scope};
use crate::error::{Error, Result};
use crate::signals::{BinOp, TypeDesc, Value};
use crate::stmt::{drive, e, if_, if_else, stream_out, truthy, v_case, v_switch, Expr};

/// Names accepted by [`build`].
pub const DESIGNS: &[&str] = &[
    "first_test_bench",
    "counter_tb",
    "axi_chain",
    "input_delay",
    "native_fifo",
    "optional_t",
];

/// Elaborates one of the reference designs by name.
pub fn build(name: &str) -> Result<Design> {
    match name {
        "first_test_bench" => Design::elaborate(FirstTestBench),
        "counter_tb" => Design::elaborate(CounterTb),
        "axi_chain" => Design::elaborate(AxiChainTb),
        "input_delay" => Design::elaborate(InputDelayTb),
        "native_fifo" => Design::elaborate(NativeFifoTb),
        "optional_t" => Design::elaborate(OptionalTb { pace: 10 }),
        other => Err(Error::Elaboration(format!(
            "unknown top entity {other} (known: {})",
            DESIGNS.join(", ")
        ))),
    }
}

fn v32() -> TypeDesc {
    TypeDesc::Vector(32)
}

/// The free-running counter with a wrap limit.
pub struct FirstTestBench;

impl Entity for FirstTestBench {
    fn type_name(&self) -> String {
        "my_first_test_bench".into()
    }
    fn ports(&self, _p: &mut Scope<'_>) -> Result<()> {
        Ok(())
    }
    fn architecture(&self, a: &mut Scope<'_>) -> Result<()> {
        let clkgen = a.instantiate("clkgen", ClockGenerator::default())?;
        let clk = a.port_node(clkgen, "clk")?;
        let counter = a.vector("counter", 32, 0)?;
        let max_cnt = a.vector("max_cnt", 32, 300)?;
        a.on_rising_edge(
            "proc",
            clk,
            vec![
                drive(counter, e(counter) + 1),
                if_(e(counter).ge(max_cnt), vec![drive(counter, 0)]),
            ],
        )?;
        a.end_architecture()
    }
}

/// Data source: sends 0, 1, 2, ... over an AXI4-Stream primary port.
pub struct Counter;

impl Entity for Counter {
    fn type_name(&self) -> String {
        "Counter".into()
    }
    fn ports(&self, p: &mut Scope<'_>) -> Result<()> {
        p.clock_in()?;
        let t = axi_stream_of(p, v32())?;
        p.port_primary("Dout", t)?;
        Ok(())
    }
    fn architecture(&self, a: &mut Scope<'_>) -> Result<()> {
        let clk = a.clk()?;
        let data = a.vector("data", 32, 0)?;
        let dout = a.own_bundle("Dout")?;
        let data_out = a.get_handle("data_out", dout)?;
        a.on_rising_edge(
            "proc",
            clk,
            vec![if_(
                truthy(data_out),
                vec![drive(data_out, data), drive(data, e(data) + 1)],
            )],
        )?;
        a.end_architecture()
    }
}

/// Stream consumer; `data` holds the last word read and `valid` flags the
/// cycles in which a word was read.
pub struct AxiPrint;

impl Entity for AxiPrint {
    fn type_name(&self) -> String {
        "AxiPrint".into()
    }
    fn ports(&self, p: &mut Scope<'_>) -> Result<()> {
        p.clock_in()?;
        let t = axi_stream_of(p, v32())?;
        p.port_secondary("D_in", t)?;
        Ok(())
    }
    fn architecture(&self, a: &mut Scope<'_>) -> Result<()> {
        let clk = a.clk()?;
        let d_in = a.own_bundle("D_in")?;
        let h = a.get_handle("data_in", d_in)?;
        let data = a.vector("data", 32, 0)?;
        let valid = a.signal("valid", TypeDesc::Logic, Some(Value::zero_bit()))?;
        a.on_rising_edge(
            "proc",
            clk,
            vec![if_else(
                truthy(h),
                vec![stream_out(h, data), drive(valid, 1)],
                vec![drive(valid, 0)],
            )],
        )?;
        a.end_architecture()
    }
}

/// Delays a stream by one clock cycle.
pub struct StreamDelayOne;

impl Entity for StreamDelayOne {
    fn type_name(&self) -> String {
        "stream_delay_one".into()
    }
    fn ports(&self, p: &mut Scope<'_>) -> Result<()> {
        p.clock_in()?;
        let t = axi_stream_of(p, v32())?;
        p.pipeline_in("Axi_in", t)?;
        p.pipeline_out("Axi_out", t)?;
        Ok(())
    }
    fn architecture(&self, a: &mut Scope<'_>) -> Result<()> {
        let clk = a.clk()?;
        let axi_in = a.own_bundle("Axi_in")?;
        let axi_out = a.own_bundle("Axi_out")?;
        let ax_salve = a.get_handle("axiSalve", axi_in)?;
        let ax_primary = a.get_handle("axPrimary", axi_out)?;
        a.on_rising_edge(
            "proc",
            clk,
            vec![if_(
                truthy(ax_salve).and(truthy(ax_primary)),
                vec![drive(ax_primary, ax_salve)],
            )],
        )?;
        a.end_architecture()
    }
}

/// A chain of `stages` [`StreamDelayOne`] instances.
pub struct InputDelay {
    pub stages: usize,
}

impl Default for InputDelay {
    fn default() -> Self {
        InputDelay { stages: 2 }
    }
}

impl Entity for InputDelay {
    fn type_name(&self) -> String {
        "InputDelay".into()
    }
    fn ports(&self, p: &mut Scope<'_>) -> Result<()> {
        p.clock_in()?;
        let t = axi_stream_of(p, v32())?;
        p.pipeline_in("D_In", t)?;
        p.pipeline_out("D_Out", t)?;
        Ok(())
    }
    fn architecture(&self, a: &mut Scope<'_>) -> Result<()> {
        let clk = a.clk()?;
        let d_in = a.own_bundle("D_In")?;
        let d_out = a.own_bundle("D_Out")?;
        let mut chain = crate::design::Stage::from(d_in);
        for i in 0..self.stages {
            let stage = a.instantiate_clocked(&format!("delay{}", i + 1), StreamDelayOne, clk)?;
            chain = a.pipe(chain, stage)?;
        }
        a.pipe(chain, d_out)?;
        a.end_architecture()
    }
}

/// Pass-through that only lets a transfer happen every `period` cycles.
pub struct ReadyPacer {
    pub period: u64,
}

impl Entity for ReadyPacer {
    fn type_name(&self) -> String {
        "ready_pacer".into()
    }
    fn ports(&self, p: &mut Scope<'_>) -> Result<()> {
        p.clock_in()?;
        let t = axi_stream_of(p, v32())?;
        p.pipeline_in("D_In", t)?;
        p.pipeline_out("D_Out", t)?;
        Ok(())
    }
    fn architecture(&self, a: &mut Scope<'_>) -> Result<()> {
        if self.period == 0 || self.period > 255 {
            return Err(Error::Elaboration(format!(
                "pacer period {} out of range 1..=255",
                self.period
            )));
        }
        let last = self.period as i64 - 1;
        let clk = a.clk()?;
        let d_in = a.own_bundle("D_In")?;
        let d_out = a.own_bundle("D_Out")?;
        let count = a.vector("count", 8, 0)?;
        a.on_rising_edge(
            "proc",
            clk,
            vec![if_else(
                e(count).ge(last),
                vec![drive(count, 0)],
                vec![drive(count, e(count) + 1)],
            )],
        )?;
        let m = |b, n: &str| a.member(b, n);
        let (in_valid, in_ready, in_data, in_last) =
            (m(d_in, "valid")?, m(d_in, "ready")?, m(d_in, "data")?, m(d_in, "last")?);
        let (out_valid, out_ready, out_data, out_last) = (
            m(d_out, "valid")?,
            m(d_out, "ready")?,
            m(d_out, "data")?,
            m(d_out, "last")?,
        );
        a.combinational(
            "gate",
            vec![
                drive(out_valid, v_switch(0, vec![v_case(e(count).eq(last), in_valid)])),
                drive(in_ready, v_switch(0, vec![v_case(e(count).eq(last), out_ready)])),
                drive(out_data, in_data),
                drive(out_last, in_last),
            ],
        )?;
        a.end_architecture()
    }
}

/// Native-FIFO read side with a counting payload; `empty` follows a fixed
/// seven-cycle pattern.
pub struct FifoCounter;

impl Entity for FifoCounter {
    fn type_name(&self) -> String {
        "fifo_counter".into()
    }
    fn ports(&self, p: &mut Scope<'_>) -> Result<()> {
        p.clock_in()?;
        let t = native_fifo_of(p, v32())?;
        p.port_primary("Dout", t)?;
        Ok(())
    }
    fn architecture(&self, a: &mut Scope<'_>) -> Result<()> {
        let clk = a.clk()?;
        let dout = a.own_bundle("Dout")?;
        let (data, empty, enable) = (
            a.member(dout, "data")?,
            a.member(dout, "empty")?,
            a.member(dout, "enable")?,
        );
        let word = a.vector("word", 32, 0)?;
        let phase = a.vector("phase", 8, 0)?;
        a.on_rising_edge(
            "proc",
            clk,
            vec![
                if_else(e(phase).ge(6), vec![drive(phase, 0)], vec![drive(phase, e(phase) + 1)]),
                if_(e(enable).eq(1), vec![drive(word, e(word) + 1)]),
            ],
        )?;
        a.combinational(
            "outputs",
            vec![
                drive(data, word),
                drive(empty, v_switch(1, vec![v_case(e(phase).lt(4), 0)])),
            ],
        )?;
        a.end_architecture()
    }
}

/// Reads a native FIFO through the `NativeFIFO_in` handler.
pub struct FifoReader;

impl Entity for FifoReader {
    fn type_name(&self) -> String {
        "fifo_reader".into()
    }
    fn ports(&self, p: &mut Scope<'_>) -> Result<()> {
        p.clock_in()?;
        let t = native_fifo_of(p, v32())?;
        p.port_secondary("Din", t)?;
        Ok(())
    }
    fn architecture(&self, a: &mut Scope<'_>) -> Result<()> {
        let clk = a.clk()?;
        let din = a.own_bundle("Din")?;
        let h = a.get_handle("fifo_in", din)?;
        let data = a.vector("data", 32, 0)?;
        a.on_rising_edge("proc", clk, vec![if_(truthy(h), vec![stream_out(h, data)])])?;
        a.end_architecture()
    }
}

pub struct CounterTb;

impl Entity for CounterTb {
    fn type_name(&self) -> String {
        "tb".into()
    }
    fn ports(&self, _p: &mut Scope<'_>) -> Result<()> {
        Ok(())
    }
    fn architecture(&self, a: &mut Scope<'_>) -> Result<()> {
        let clkgen = a.instantiate("clkgen", ClockGenerator::default())?;
        let clk = a.port_node(clkgen, "clk")?;
        a.instantiate_clocked("cnt", Counter, clk)?;
        a.end_architecture()
    }
}

pub struct AxiChainTb;

impl Entity for AxiChainTb {
    fn type_name(&self) -> String {
        "tb".into()
    }
    fn ports(&self, _p: &mut Scope<'_>) -> Result<()> {
        Ok(())
    }
    fn architecture(&self, a: &mut Scope<'_>) -> Result<()> {
        let clkgen = a.instantiate("clkgen", ClockGenerator::default())?;
        let clk = a.port_node(clkgen, "clk")?;
        let cnt = a.instantiate_clocked("cnt", Counter, clk)?;
        let ax_print = a.instantiate_clocked("axPrint", AxiPrint, clk)?;
        let (d_in, dout) = (a.port_bundle(ax_print, "D_in")?, a.port_bundle(cnt, "Dout")?);
        a.connect(d_in, dout)?;
        a.end_architecture()
    }
}

pub struct InputDelayTb;

impl Entity for InputDelayTb {
    fn type_name(&self) -> String {
        "tb".into()
    }
    fn ports(&self, _p: &mut Scope<'_>) -> Result<()> {
        Ok(())
    }
    fn architecture(&self, a: &mut Scope<'_>) -> Result<()> {
        let clkgen = a.instantiate("clkgen", ClockGenerator::default())?;
        let clk = a.port_node(clkgen, "clk")?;
        let cnt = a.instantiate_clocked("cnt", Counter, clk)?;
        let delay = a.instantiate_clocked("delay", InputDelay::default(), clk)?;
        let ax_print = a.instantiate_clocked("axPrint", AxiPrint, clk)?;
        let (dout, d_in) = (a.port_bundle(cnt, "Dout")?, a.port_bundle(ax_print, "D_in")?);
        let chain = a.pipe(dout, delay)?;
        a.pipe(chain, d_in)?;
        a.end_architecture()
    }
}

pub struct NativeFifoTb;

impl Entity for NativeFifoTb {
    fn type_name(&self) -> String {
        "tb".into()
    }
    fn ports(&self, _p: &mut Scope<'_>) -> Result<()> {
        Ok(())
    }
    fn architecture(&self, a: &mut Scope<'_>) -> Result<()> {
        let clkgen = a.instantiate("clkgen", ClockGenerator::default())?;
        let clk = a.port_node(clkgen, "clk")?;
        let fifo = a.instantiate_clocked("fifo", FifoCounter, clk)?;
        let reader = a.instantiate_clocked("reader", FifoReader, clk)?;
        let (din, dout) = (a.port_bundle(reader, "Din")?, a.port_bundle(fifo, "Dout")?);
        a.connect(din, dout)?;
        a.end_architecture()
    }
}

/// Counter read into a plain vector and into an `optional_t`, with a
/// transfer every `pace` cycles.
pub struct OptionalTb {
    pub pace: u64,
}

impl Entity for OptionalTb {
    fn type_name(&self) -> String {
        "tb".into()
    }
    fn ports(&self, _p: &mut Scope<'_>) -> Result<()> {
        Ok(())
    }
    fn architecture(&self, a: &mut Scope<'_>) -> Result<()> {
        let clkgen = a.instantiate("clkgen", ClockGenerator::default())?;
        let clk = a.port_node(clkgen, "clk")?;
        let cnt = a.instantiate_clocked("cnt", Counter, clk)?;
        let pacer = a.instantiate_clocked("pacer", ReadyPacer { period: self.pace }, clk)?;
        let dout = a.port_bundle(cnt, "Dout")?;
        a.pipe(dout, pacer)?;
        let paced = a.port_bundle(pacer, "D_Out")?;
        let cnt_out = a.get_handle("cnt_out", paced)?;
        let data = a.vector("data", 32, 0)?;
        let opt_ty = TypeDesc::optional(v32());
        let opt_data = a.signal("opt_data", opt_ty.clone(), Some(Value::zero_for(&opt_ty)))?;
        a.on_rising_edge(
            "proc",
            clk,
            vec![stream_out(cnt_out, data), stream_out(cnt_out, opt_data)],
        )?;
        a.end_architecture()
    }
}

pub type WordQueue = Arc<Mutex<VecDeque<u32>>>;
pub type WordLog = Arc<Mutex<Vec<u32>>>;

/// Host-driven stream source: sends queued words whenever the link is free.
/// With `valid_prob < 1` it idles on randomly chosen cycles.
pub struct WordSource {
    pub words: WordQueue,
    pub valid_prob: f64,
    pub seed: u64,
}

impl Entity for WordSource {
    fn type_name(&self) -> String {
        "word_source".into()
    }
    fn ports(&self, p: &mut Scope<'_>) -> Result<()> {
        p.clock_in()?;
        let t = axi_stream_of(p, v32())?;
        p.pipeline_out("Dout", t)?;
        Ok(())
    }
    fn architecture(&self, a: &mut Scope<'_>) -> Result<()> {
        let clk = a.clk()?;
        let dout = a.own_bundle("Dout")?;
        let h = a.get_handle("tx", dout)?;
        let words = self.words.clone();
        let prob = self.valid_prob;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        a.on_rising_edge_native(
            "proc",
            clk,
            NativeDecl {
                handlers: vec![h],
                ..NativeDecl::default()
            },
            Box::new(move |ctx| {
                if prob < 1.0 && !rng.gen_bool(prob) {
                    return Ok(());
                }
                if ctx.truthy(h)? {
                    let next = words.lock().expect("word queue").pop_front();
                    if let Some(w) = next {
                        ctx.send(h, Value::vector(32, w as u128)?)?;
                    }
                }
                Ok(())
            }),
        )?;
        a.end_architecture()
    }
}

/// Host-driven stream sink: reads a word on each cycle in which it is
/// willing (probability `ready_prob`) and appends it to `log`.
pub struct WordSink {
    pub log: WordLog,
    pub ready_prob: f64,
    pub seed: u64,
}

impl Entity for WordSink {
    fn type_name(&self) -> String {
        "word_sink".into()
    }
    fn ports(&self, p: &mut Scope<'_>) -> Result<()> {
        p.clock_in()?;
        let t = axi_stream_of(p, v32())?;
        p.pipeline_in("D_in", t)?;
        Ok(())
    }
    fn architecture(&self, a: &mut Scope<'_>) -> Result<()> {
        let clk = a.clk()?;
        let d_in = a.own_bundle("D_in")?;
        let h = a.get_handle("rx", d_in)?;
        let log = self.log.clone();
        let prob = self.ready_prob;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        a.on_rising_edge_native(
            "proc",
            clk,
            NativeDecl {
                handlers: vec![h],
                ..NativeDecl::default()
            },
            Box::new(move |ctx| {
                if prob < 1.0 && !rng.gen_bool(prob) {
                    return Ok(());
                }
                if let Some(v) = ctx.receive(h)? {
                    let w = v
                        .as_u128()
                        .ok_or_else(|| Error::Type("stream word is not numeric".into()))?;
                    log.lock().expect("word log").push(w as u32);
                }
                Ok(())
            }),
        )?;
        a.end_architecture()
    }
}

/// Native-FIFO read side whose `empty` flag changes randomly on every tick
/// (both clock phases). `word` counts accepted reads.
pub struct RandomEmptyFifo {
    pub seed: u64,
}

impl Entity for RandomEmptyFifo {
    fn type_name(&self) -> String {
        "random_fifo".into()
    }
    fn ports(&self, p: &mut Scope<'_>) -> Result<()> {
        p.clock_in()?;
        let t = native_fifo_of(p, v32())?;
        p.port_primary("Dout", t)?;
        Ok(())
    }
    fn architecture(&self, a: &mut Scope<'_>) -> Result<()> {
        let clk = a.clk()?;
        let dout = a.own_bundle("Dout")?;
        let (data, empty, enable) = (
            a.member(dout, "data")?,
            a.member(dout, "empty")?,
            a.member(dout, "enable")?,
        );
        let clkn = a.signal("clkn", TypeDesc::Logic, Some(Value::one()))?;
        let rise = a.signal("rise", TypeDesc::Logic, Some(Value::zero_bit()))?;
        let fall = a.signal("fall", TypeDesc::Logic, Some(Value::zero_bit()))?;
        let word = a.vector("word", 32, 0)?;
        a.combinational("invert", vec![drive(clkn, !e(clk))])?;
        a.combinational(
            "outputs",
            vec![
                drive(empty, Expr::Bin(BinOp::Xor, Box::new(e(rise)), Box::new(e(fall)))),
                drive(data, word),
            ],
        )?;
        let mut rng_a = ChaCha8Rng::seed_from_u64(self.seed);
        a.on_rising_edge_native(
            "on_rise",
            clk,
            NativeDecl {
                reads: vec![enable, word],
                drives: vec![rise, word],
                handlers: Vec::new(),
            },
            Box::new(move |ctx| {
                ctx.drive(rise, rng_a.gen_bool(0.5))?;
                if ctx.read(enable) == Value::one() {
                    let w = ctx.read_u128(word)?;
                    ctx.drive(word, Value::vector_wrapping(32, w + 1))?;
                }
                Ok(())
            }),
        )?;
        let mut rng_b = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed);
        a.on_rising_edge_native(
            "on_fall",
            clkn,
            NativeDecl {
                reads: Vec::new(),
                drives: vec![fall],
                handlers: Vec::new(),
            },
            Box::new(move |ctx| ctx.drive(fall, rng_b.gen_bool(0.5))),
        )?;
        a.end_architecture()
    }
}

/// Test bench around [`RandomEmptyFifo`] and [`FifoReader`].
pub struct RandomFifoTb {
    pub seed: u64,
}

impl Entity for RandomFifoTb {
    fn type_name(&self) -> String {
        "tb".into()
    }
    fn ports(&self, _p: &mut Scope<'_>) -> Result<()> {
        Ok(())
    }
    fn architecture(&self, a: &mut Scope<'_>) -> Result<()> {
        let clkgen = a.instantiate("clkgen", ClockGenerator::default())?;
        let clk = a.port_node(clkgen, "clk")?;
        let fifo = a.instantiate_clocked("fifo", RandomEmptyFifo { seed: self.seed }, clk)?;
        let reader = a.instantiate_clocked("reader", FifoReader, clk)?;
        let (din, dout) = (a.port_bundle(reader, "Din")?, a.port_bundle(fifo, "Dout")?);
        a.connect(din, dout)?;
        a.end_architecture()
    }
}

/// Host source → `dut` → host sink, all on one generated clock.
pub struct StreamHarness<E: Entity> {
    pub dut: Mutex<Option<E>>,
    pub source: Mutex<Option<WordSource>>,
    pub sink: Mutex<Option<WordSink>>,
}

impl<E: Entity> StreamHarness<E> {
    pub fn new(dut: E, source: WordSource, sink: WordSink) -> Self {
        StreamHarness {
            dut: Mutex::new(Some(dut)),
            source: Mutex::new(Some(source)),
            sink: Mutex::new(Some(sink)),
        }
    }
}

fn take<T>(m: &Mutex<Option<T>>) -> Result<T> {
    m.lock()
        .expect("harness part")
        .take()
        .ok_or_else(|| Error::Elaboration("harness architecture ran twice".into()))
}

impl<E: Entity> Entity for StreamHarness<E> {
    fn type_name(&self) -> String {
        "harness".into()
    }
    fn ports(&self, _p: &mut Scope<'_>) -> Result<()> {
        Ok(())
    }
    fn architecture(&self, a: &mut Scope<'_>) -> Result<()> {
        let clkgen = a.instantiate("clkgen", ClockGenerator::default())?;
        let clk = a.port_node(clkgen, "clk")?;
        let src = a.instantiate_clocked("source", take(&self.source)?, clk)?;
        let dut = a.instantiate_clocked("dut", take(&self.dut)?, clk)?;
        let sink = a.instantiate_clocked("sink", take(&self.sink)?, clk)?;
        let chain = a.pipe(src, dut)?;
        a.pipe(chain, sink)?;
        a.end_architecture()
    }
}
