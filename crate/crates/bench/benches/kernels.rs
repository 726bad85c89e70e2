use std::hint::black_box;

use cortex_align::alignment::{AlignmentModel, AlignmentSpec};
use cortex_align::autoencoder::{AutoencoderSpec, Decoder, Encoder};
use cortex_align::nn::{mse_loss_grad, Conv1d, ConvTranspose1d, Mode};
use cortex_align::signal::{pool_rows, POOLED_LEN};
use cortex_align::RngStream;
use cortex_align_bench::gaussian;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

fn bench_pooling(c: &mut Criterion) {
    let mut group = c.benchmark_group("pool_rows");
    for len in [300, 1000, 4000] {
        let x = gaussian(&[128, len], 1);
        group.throughput(Throughput::Elements((128 * len) as u64));
        group.bench_with_input(BenchmarkId::from_parameter(len), &x, |b, x| {
            b.iter(|| pool_rows(black_box(x), POOLED_LEN).unwrap())
        });
    }
    group.finish();
}

fn bench_conv(c: &mut Criterion) {
    let mut rng = RngStream::new(2);
    let mut conv = Conv1d::<f32>::new(128, 64, 3, 2, 1, &mut rng).unwrap();
    let mut deconv = ConvTranspose1d::<f32>::new(64, 128, 3, 2, 1, 1, &mut rng).unwrap();
    let x = gaussian(&[32, 128, 256], 3);
    let z = gaussian(&[32, 64, 128], 4);

    let mut group = c.benchmark_group("conv1d");
    group.bench_function("forward", |b| b.iter(|| conv.forward(black_box(&x)).unwrap()));
    let y = conv.forward(&x).unwrap();
    group.bench_function("backward", |b| b.iter(|| conv.backward(black_box(&y)).unwrap()));
    group.finish();

    let mut group = c.benchmark_group("conv_transpose1d");
    group.bench_function("forward", |b| b.iter(|| deconv.forward(black_box(&z)).unwrap()));
    let y = deconv.forward(&z).unwrap();
    group.bench_function("backward", |b| b.iter(|| deconv.backward(black_box(&y)).unwrap()));
    group.finish();
}

fn bench_autoencoder_step(c: &mut Criterion) {
    let spec = AutoencoderSpec {
        channels: 128,
        length: POOLED_LEN,
        latent_dim: 64,
    };
    let mut rng = RngStream::new(5);
    let mut enc = Encoder::<f32>::new(spec, &mut rng).unwrap();
    let mut dec = Decoder::<f32>::new(spec, &mut rng).unwrap();
    let x = gaussian(&[32, 128, POOLED_LEN], 6);
    c.bench_function("autoencoder/train_step_b32", |b| {
        b.iter(|| {
            let z = enc.forward(&x).unwrap();
            let recon = dec.forward(&z).unwrap();
            let (_, g) = mse_loss_grad(&recon, &x).unwrap();
            let gz = dec.backward(&g).unwrap();
            enc.backward(&gz).unwrap()
        })
    });
}

fn bench_alignment(c: &mut Criterion) {
    let mut rng = RngStream::new(7);
    let mut model = AlignmentModel::<f32>::new(AlignmentSpec::new(64, 3584), &mut rng).unwrap();
    let x = gaussian(&[32, 64], 8);
    let mut drop = RngStream::new(9);
    let mut group = c.benchmark_group("alignment_b32");
    group.sample_size(20);
    group.bench_function("train_forward_backward", |b| {
        b.iter(|| {
            let y = model.forward(&x, Mode::Train, &mut drop).unwrap();
            model.backward(&y).unwrap()
        })
    });
    group.bench_function("eval_apply", |b| b.iter(|| model.apply(black_box(&x)).unwrap()));
    group.finish();
}

criterion_group!(
    benches,
    bench_pooling,
    bench_conv,
    bench_autoencoder_step,
    bench_alignment
);
criterion_main!(benches);
