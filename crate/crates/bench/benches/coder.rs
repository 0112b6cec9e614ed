use criterion::{black_box, criterion_group, criterion_main, Criterion, Throughput};
use liftwave_core::coder::range::{Prob, RangeDecoder, RangeEncoder};
use liftwave_core::coder::subband::{decode_subband, encode_subband};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bench_range_coder(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 1 << 18;
    let bits: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.2)).collect();
    let mut group = c.benchmark_group("range_coder");
    group.throughput(Throughput::Elements(n as u64));
    group.bench_function("encode_bits", |b| {
        b.iter(|| {
            let mut enc = RangeEncoder::new();
            let mut p = Prob::default();
            for &bit in black_box(&bits) {
                enc.encode_bit(&mut p, bit);
            }
            enc.finish()
        })
    });
    let mut enc = RangeEncoder::new();
    let mut p = Prob::default();
    for &bit in &bits {
        enc.encode_bit(&mut p, bit);
    }
    let payload = enc.finish();
    group.bench_function("decode_bits", |b| {
        b.iter(|| {
            let mut dec = RangeDecoder::new(black_box(&payload)).unwrap();
            let mut p = Prob::default();
            let mut acc = 0usize;
            for _ in 0..n {
                acc += dec.decode_bit(&mut p).unwrap() as usize;
            }
            acc
        })
    });
    group.finish();
}

fn bench_subband_codec(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (h, w) = (128, 128);
    // Laplacian-ish indices.
    let indices: Vec<i64> = (0..h * w)
        .map(|_| {
            let u: f64 = rng.gen();
            let mag = (-(1.0 - u).ln() * 2.0) as i64;
            if rng.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    let mut group = c.benchmark_group("subband");
    group.throughput(Throughput::Elements((h * w) as u64));
    group.bench_function("encode_128x128", |b| {
        b.iter(|| encode_subband(black_box(&indices), h, w).unwrap())
    });
    let payload = encode_subband(&indices, h, w).unwrap();
    group.bench_function("decode_128x128", |b| {
        b.iter(|| {
            decode_subband(
                black_box(&payload.bytes),
                h,
                w,
                payload.nplanes,
                payload.nplanes,
            )
            .unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, bench_range_coder, bench_subband_codec);
criterion_main!(benches);
