//! In-process envelope throughput: asky against the BBW baseline.
//!
//! Keys are generated before timing starts. Throughput is reported in
//! members per second, i.e. group size times operations per second.

use std::time::{Duration, Instant};

use rand::Rng;

use asky_core::bbw::{
    bbw_decrypt_traced, bbw_encrypt, bbw_keygen, BbwCiphertext, BbwKeyPair, BbwMode, BbwTrace, PublicKey,
};
use asky_core::envelope::{encoded_len, open_envelope_traced};
use asky_core::{build_envelope, build_envelope_indexed, Envelope, EnvelopeMode, FileKey, OpenTrace, UserSecretKey};

use crate::report::{BenchReport, BenchRow};
use crate::stats::Summary;

pub const SCENARIO: &str = "micro";

#[derive(Clone, Debug)]
pub struct MicroConfig {
    pub group_sizes: Vec<usize>,
    pub repetitions: usize,
    /// BBW is skipped above this group size.
    pub bbw_max_group: usize,
    pub bbw_modes: Vec<BbwMode>,
    pub asky_modes: Vec<EnvelopeMode>,
    /// Fast operations are repeated until a sample spans at least this long.
    pub min_sample_time: Duration,
}

impl Default for MicroConfig {
    fn default() -> Self {
        MicroConfig {
            group_sizes: vec![10, 100, 1000, 10000],
            repetitions: 5,
            bbw_max_group: 1000,
            bbw_modes: vec![BbwMode::Standard, BbwMode::Indexed],
            asky_modes: vec![EnvelopeMode::Linear, EnvelopeMode::Indexed],
            min_sample_time: Duration::from_millis(50),
        }
    }
}

pub fn mode_name(mode: EnvelopeMode) -> &'static str {
    match mode {
        EnvelopeMode::Linear => "linear",
        EnvelopeMode::Indexed => "indexed",
    }
}

pub fn bbw_mode_name(mode: BbwMode) -> &'static str {
    match mode {
        BbwMode::Standard => "standard",
        BbwMode::Indexed => "indexed",
    }
}

/// Runs `op` until `min` has elapsed; returns operations per second.
fn rate(min: Duration, mut op: impl FnMut()) -> f64 {
    let start = Instant::now();
    let mut iters = 0u64;
    loop {
        op();
        iters += 1;
        let elapsed = start.elapsed();
        if elapsed >= min {
            return iters as f64 / elapsed.as_secs_f64();
        }
    }
}

pub fn build(mode: EnvelopeMode, keys: &[UserSecretKey], fk: &FileKey) -> Envelope {
    match mode {
        EnvelopeMode::Linear => build_envelope(keys, fk),
        EnvelopeMode::Indexed => build_envelope_indexed(keys, fk),
    }
    .expect("non-empty group")
}

#[derive(Default)]
struct Samples {
    env: Vec<f64>,
    dnv: Vec<f64>,
    decryptions: Vec<f64>,
    comparisons: Vec<f64>,
}

impl Samples {
    fn rows(&self, report: &mut BenchReport, system: &str, mode: &str, n: usize) {
        let row = || BenchRow::new(SCENARIO, system, "", mode).group_size(n);
        let op = |r: BenchRow, name: &str| BenchRow { operation: name.into(), ..r };
        report.push(op(row(), "envelope").metric("throughput", "members/s", Summary::of(&self.env)));
        report.push(op(row(), "de-envelope").metric("throughput", "members/s", Summary::of(&self.dnv)));
        report.push(op(row(), "de-envelope").metric("decryptions", "count", Summary::of(&self.decryptions)));
        report.push(op(row(), "de-envelope").metric("label_comparisons", "count", Summary::of(&self.comparisons)));
    }
}

fn asky_sample(mode: EnvelopeMode, keys: &[UserSecretKey], min: Duration, s: &mut Samples) {
    let n = keys.len() as f64;
    let fk = FileKey::random();
    s.env.push(n * rate(min, || {
        std::hint::black_box(build(mode, keys, &fk));
    }));

    let env = build(mode, keys, &fk);
    let mut rng = rand::thread_rng();
    let (mut opens, mut dec, mut cmp) = (0usize, 0usize, 0usize);
    s.dnv.push(n * rate(min, || {
        let usk = &keys[rng.gen_range(0..keys.len())];
        let mut trace = OpenTrace::default();
        let got = open_envelope_traced(usk, &env, &mut trace).expect("member opens");
        std::hint::black_box(got);
        opens += 1;
        dec += trace.decryptions;
        cmp += trace.label_comparisons;
    }));
    s.decryptions.push(dec as f64 / opens as f64);
    s.comparisons.push(cmp as f64 / opens as f64);
}

fn bbw_sample(mode: BbwMode, pairs: &[BbwKeyPair], pks: &[PublicKey], min: Duration, s: &mut Samples) {
    let n = pairs.len() as f64;
    let fk = FileKey::random();
    s.env.push(n * rate(min, || {
        std::hint::black_box(bbw_encrypt(pks, &fk, mode).expect("non-empty group"));
    }));
    let ct = bbw_encrypt(pks, &fk, mode).expect("non-empty group");
    let mut rng = rand::thread_rng();
    let (mut opens, mut dec, mut cmp) = (0usize, 0usize, 0usize);
    s.dnv.push(n * rate(min, || {
        let kp = &pairs[rng.gen_range(0..pairs.len())];
        let mut trace = BbwTrace::default();
        let got = bbw_decrypt_traced(&kp.secret_key, &ct, &mut trace).expect("member opens");
        std::hint::black_box(got);
        opens += 1;
        dec += trace.pke_decryptions;
        cmp += trace.label_comparisons;
    }));
    s.decryptions.push(dec as f64 / opens as f64);
    s.comparisons.push(cmp as f64 / opens as f64);
}

/// Measures every configured system and mode. Within a repetition the
/// variants run back to back so slow drift affects all of them alike.
pub fn micro_crypto_bench(cfg: &MicroConfig) -> BenchReport {
    let mut report = BenchReport::default();
    for &n in &cfg.group_sizes {
        let keys: Vec<UserSecretKey> = (0..n).map(|_| UserSecretKey::random()).collect();
        let with_bbw = n <= cfg.bbw_max_group && !cfg.bbw_modes.is_empty();
        let pairs: Vec<BbwKeyPair> = if with_bbw { (0..n).map(|_| bbw_keygen()).collect() } else { Vec::new() };
        let pks: Vec<_> = pairs.iter().map(|p| p.public_key).collect();

        let mut asky: Vec<Samples> = cfg.asky_modes.iter().map(|_| Samples::default()).collect();
        let mut bbw: Vec<Samples> = cfg.bbw_modes.iter().map(|_| Samples::default()).collect();
        for _ in 0..cfg.repetitions.max(1) {
            for (mode, s) in cfg.asky_modes.iter().zip(asky.iter_mut()) {
                asky_sample(*mode, &keys, cfg.min_sample_time, s);
            }
            if with_bbw {
                for (mode, s) in cfg.bbw_modes.iter().zip(bbw.iter_mut()) {
                    bbw_sample(*mode, &pairs, &pks, cfg.min_sample_time, s);
                }
            }
        }

        for (mode, s) in cfg.asky_modes.iter().zip(&asky) {
            let name = mode_name(*mode);
            s.rows(&mut report, "asky", name, n);
            let per_member = (encoded_len(*mode, n) - encoded_len(*mode, 0)) / n;
            report.push(
                BenchRow::new(SCENARIO, "asky", "envelope", name)
                    .group_size(n)
                    .exact("per_member_bytes", "bytes", per_member as f64),
            );
            report.push(
                BenchRow::new(SCENARIO, "asky", "envelope", name)
                    .group_size(n)
                    .exact("envelope_bytes", "bytes", build(*mode, &keys, &FileKey::random()).to_bytes().len() as f64),
            );
        }
        if with_bbw {
            for (mode, s) in cfg.bbw_modes.iter().zip(&bbw) {
                let name = bbw_mode_name(*mode);
                s.rows(&mut report, "bbw", name, n);
                report.push(
                    BenchRow::new(SCENARIO, "bbw", "envelope", name)
                        .group_size(n)
                        .exact("per_member_bytes", "bytes", BbwCiphertext::per_member_len(*mode) as f64),
                );
            }
        }
    }
    report
}
