use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use set2box::io::{pack_codes, unpack_codes};
use set2box::quant::{code_width, discretize, reconstruct};
use set2box_bench::{boxes, codebook};

fn quantize(c: &mut Criterion) {
    let cb = codebook(32, 16, 30, 5);
    let b = boxes(1, 32, 6).remove(0);
    let codes = discretize(&b, &cb).unwrap();
    c.bench_function("discretize d=32 D=16 K=30", |bench| bench.iter(|| discretize(black_box(&b), &cb)));
    c.bench_function("reconstruct d=32 D=16 K=30", |bench| bench.iter(|| reconstruct(black_box(&codes), &cb)));

    let many: Vec<u32> = (0..16 * 6000).map(|i| (i * 7 % 30) as u32).collect();
    let width = code_width(30);
    let packed = pack_codes(&many, width);
    c.bench_function("pack 96k codes", |bench| bench.iter(|| pack_codes(black_box(&many), width)));
    c.bench_function("unpack 96k codes", |bench| {
        bench.iter(|| unpack_codes(black_box(&packed), width, many.len()))
    });
}

criterion_group!(benches, quantize);
criterion_main!(benches);
