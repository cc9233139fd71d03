use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use patchkit_core::align::matching_blocks;
use patchkit_core::curriculum::line_diff;
use patchkit_core::metrics::char_levenshtein;
use patchkit_core::normalize::{normalize, SourceText};

fn random_tokens(rng: &mut ChaCha8Rng, len: usize, alphabet: u32) -> Vec<u32> {
    (0..len).map(|_| rng.gen_range(0..alphabet)).collect()
}

fn mutate(rng: &mut ChaCha8Rng, base: &[u32], alphabet: u32) -> Vec<u32> {
    base.iter()
        .map(|&t| if rng.gen_bool(0.1) { rng.gen_range(0..alphabet) } else { t })
        .collect()
}

fn bench_matching_blocks(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut group = c.benchmark_group("matching_blocks");
    for len in [100usize, 500, 2000] {
        let a = random_tokens(&mut rng, len, 64);
        let b = mutate(&mut rng, &a, 64);
        group.bench_with_input(BenchmarkId::from_parameter(len), &len, |bencher, _| {
            bencher.iter(|| matching_blocks(&a, &b));
        });
    }
    group.finish();
}

fn bench_levenshtein(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut group = c.benchmark_group("char_levenshtein");
    for len in [100usize, 500, 1000] {
        let a: String = (0..len).map(|_| rng.gen_range(b'a'..=b'z') as char).collect();
        let b: String = a
            .chars()
            .map(|ch| if rng.gen_bool(0.1) { rng.gen_range(b'a'..=b'z') as char } else { ch })
            .collect();
        group.bench_with_input(BenchmarkId::from_parameter(len), &len, |bencher, _| {
            bencher.iter(|| char_levenshtein(&a, &b));
        });
    }
    group.finish();
}

fn bench_normalize_and_diff(c: &mut Criterion) {
    let source: String = (0..200)
        .map(|i| format!("int v{i} = compute({i}); // comment {i}\n"))
        .collect();
    let patched = source.replace("compute(7)", "computeFixed(7)");
    c.bench_function("normalize_200_lines", |bencher| {
        bencher.iter(|| normalize(&SourceText::from(source.as_str())));
    });
    let nb = normalize(&SourceText::from(source.as_str()));
    let nf = normalize(&SourceText::from(patched.as_str()));
    c.bench_function("line_diff_200_lines", |bencher| {
        bencher.iter(|| line_diff(&nb, &nf));
    });
}

criterion_group!(benches, bench_matching_blocks, bench_levenshtein, bench_normalize_and_diff);
criterion_main!(benches);
