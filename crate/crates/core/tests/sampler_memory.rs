//! Resident heap while the sampler is stalled stays within the queue budget.

use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voxsr::pyramid::downsample_by;
use voxsr::sampler::{sample_stream_single, LevelRef, SamplerConfig};
use voxsr::store::MemoryStore;
use voxsr::{Dims, Group, Volume};

struct Counting;

static CURRENT: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);

unsafe impl GlobalAlloc for Counting {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = unsafe { System.alloc(layout) };
        if !p.is_null() {
            let now = CURRENT.fetch_add(layout.size(), Ordering::SeqCst) + layout.size();
            PEAK.fetch_max(now, Ordering::SeqCst);
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        unsafe { System.dealloc(ptr, layout) };
        CURRENT.fetch_sub(layout.size(), Ordering::SeqCst);
    }
}

#[global_allocator]
static ALLOC: Counting = Counting;

#[test]
fn stalled_and_streaming_heap_stays_within_queue_budget() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let hr = Volume::from_fn(Dims::new(128, 64, 64), [1.0; 3], |_, _, _| rng.random_range(1..=u16::MAX));
    let lr = downsample_by(&hr, 2).unwrap();
    let store = Arc::new(MemoryStore::new().with_group(Group::Hr, vec![hr]).with_group(Group::Lr, vec![lr]));
    let cfg = SamplerConfig {
        workers: 2,
        threads_per_worker: 2,
        queue_capacity: 2,
        scale: 2,
        lr_patch: 8,
        lr_source: LevelRef::new(Group::Lr, 0),
        hr_source: LevelRef::new(Group::Hr, 0),
        ..SamplerConfig::default()
    };
    let pair_bytes = 2 * (8usize.pow(3) + 16usize.pow(3));
    // Queued pairs, one blocked in send and one being assembled, per lane.
    let budget = cfg.lanes() * (cfg.queue_capacity + 2) * pair_bytes;
    let slack = 64 * 1024;

    let baseline = CURRENT.load(Ordering::SeqCst);
    PEAK.store(baseline, Ordering::SeqCst);
    let mut stream = sample_stream_single(store, &cfg).unwrap();
    std::thread::sleep(Duration::from_millis(500));
    let stalled = PEAK.load(Ordering::SeqCst) - baseline;
    assert!(stalled >= cfg.lanes() * cfg.queue_capacity * pair_bytes, "queues never filled: {stalled} B");
    assert!(stalled <= budget + slack, "stalled peak {stalled} B over budget {budget} B");

    for pair in stream.by_ref().take(200) {
        drop(pair.unwrap());
    }
    let streaming = PEAK.load(Ordering::SeqCst) - baseline;
    assert!(streaming <= budget + pair_bytes + slack, "streaming peak {streaming} B over budget {budget} B");
    drop(stream);
}
