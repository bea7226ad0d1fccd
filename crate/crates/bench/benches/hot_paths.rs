use std::collections::BTreeMap;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use edgeserve_core::clock::VirtualTime;
use edgeserve_core::graph::{execute_graph, GraphState, TransformGraph};
use edgeserve_core::manifest::{ColourSpace, InputSpec, VisionSpec};
use edgeserve_core::scheduler::{Scheduler, SchedulerConfig};
use edgeserve_core::sensor::{generate_payload, Sample, SampleKey, SensorConfig};
use edgeserve_core::store::DataStore;
use edgeserve_core::OutputValue;

fn camera() -> SensorConfig {
    SensorConfig::Vision {
        width_px: 640,
        height_px: 480,
        colour_space: ColourSpace::Yuv,
        rate_hz: 30.0,
    }
}

fn four_model_requirements() -> BTreeMap<String, InputSpec> {
    let req = |w, h, c| {
        InputSpec::Vision(VisionSpec {
            width_px: w,
            height_px: h,
            colour_space: c,
            rate_hz: 30.0,
        })
    };
    BTreeMap::from([
        ("m1".to_string(), req(320, 320, ColourSpace::Rgb)),
        ("m2".to_string(), req(320, 320, ColourSpace::Yuv)),
        ("m3".to_string(), req(224, 224, ColourSpace::Rgb)),
        ("m4".to_string(), req(224, 224, ColourSpace::Gray)),
    ])
}

fn bench_shared_graph(c: &mut Criterion) {
    let config = camera();
    let reqs = four_model_requirements();
    let graph = TransformGraph::build_shared(&reqs, &config).unwrap();
    let mut state = GraphState::new(&graph, &BTreeMap::new());
    let mut seq = 0u64;
    c.bench_function("shared_graph_execute_vga_frame", |b| {
        b.iter(|| {
            seq += 1;
            let sample = Sample {
                key: SampleKey {
                    sensor_id: "cam0".to_string(),
                    seq,
                },
                acquired_at: VirtualTime(seq),
                payload: Arc::new(generate_payload(1, "cam0", seq, &config)),
            };
            black_box(execute_graph(&graph, &mut state, &sample).unwrap())
        })
    });
}

fn bench_scheduler_decision(c: &mut Criterion) {
    let mut scheduler = Scheduler::new(SchedulerConfig::default());
    scheduler.register_model("m", 300);
    for b in 1..=8 {
        for _ in 0..8 {
            scheduler.record_latency("m", b, 90.0 + 20.0 * b as f64).unwrap();
        }
    }
    c.bench_function("scheduler_record_and_decide", |b| {
        b.iter(|| {
            scheduler.record_latency("m", 4, black_box(170.0)).unwrap();
            black_box(scheduler.decide_batch_size("m").unwrap())
        })
    });
}

fn bench_store_roundtrip(c: &mut Criterion) {
    let mut store = DataStore::new(10_000);
    store.register_source("f");
    let mut seq = 0u64;
    c.bench_function("store_put_get_latest", |b| {
        b.iter(|| {
            seq += 1;
            store.put(
                "f",
                SampleKey {
                    sensor_id: "cam0".to_string(),
                    seq,
                },
                VirtualTime(seq),
                OutputValue::Count(seq),
            );
            black_box(store.get_latest("f").unwrap().store_seq)
        })
    });
}

criterion_group!(
    benches,
    bench_shared_graph,
    bench_scheduler_decision,
    bench_store_roundtrip
);
criterion_main!(benches);
