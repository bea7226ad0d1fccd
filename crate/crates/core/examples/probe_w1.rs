use edgeserve_core::harness::preset;
use edgeserve_core::runtime::{Policy, Runtime};
use edgeserve_core::VirtualTime;

fn main() {
    let spec = preset("w1").unwrap();
    let cfg = spec.runtime_config().unwrap();
    let mut rt = Runtime::new(cfg, Policy::Adaptive, 42);
    rt.deploy(&spec.bundle().unwrap()).unwrap();
    rt.start_sensors();
    rt.run_until(VirtualTime::from_secs(30.0)).unwrap();
    for model in rt.model_ids() {
        let m = rt.metrics(&model).unwrap();
        let c = rt.scheduler().counters(&model).unwrap();
        println!("--- {model}: comp={} hits={} enq={} disp={} disc={} queued={} rate={:?}",
            m.completed_samples, m.hits, c.enqueued, c.dispatched, c.discarded,
            rt.scheduler().queue_len(&model).unwrap(), rt.coordinator().model_rate(&model));
        for (t, lat, b) in m.latency_trace.iter() {
            println!("  t={t:.3} lat={lat:.0} b={b}");
        }
    }
}
