use std::time::Instant;

use cpas_core::num::Weight;
use cpas_core::scheduler::TaskQueue;
use num_rational::Rational64;

use crate::Scalar;

pub fn run(tasks: usize, budget: u64, work: u64, scalar: Scalar) -> String {
    match scalar {
        Scalar::F64 => bench::<f64>("f64", tasks, budget, work),
        Scalar::F32 => bench::<f32>("f32", tasks, budget, work),
        Scalar::Rational => bench::<Rational64>("rational", tasks, budget, work),
    }
}

fn bench<W: Weight>(name: &str, tasks: usize, budget: u64, work: u64) -> String {
    let works = vec![work; tasks];
    let start = Instant::now();
    let mut q = TaskQueue::<W>::from_work(&works, budget);
    let (mut slices, mut ticks, mut violations) = (0u64, 0u64, 0u64);
    while let Ok(s) = q.next_slice() {
        let used = s.ticks.min(q.entries().next().map_or(0, |e| e.remaining_work));
        q.run_slice(used).expect("queue is non-empty");
        slices += 1;
        ticks += used;
        if slices % 1024 == 0 && !q.satisfies_constraints() {
            violations += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    format!(
        "scalar={name} tasks={tasks} budget={budget} work={work} slices={slices} ticks={ticks} \
         elapsed={secs:.3}s rate={:.0} slices/s constraint_violations={violations}",
        slices as f64 / secs.max(1e-9)
    )
}
