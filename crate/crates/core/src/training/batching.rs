//! Single-task batches interleaved across tasks.

use rand::seq::{IndexedRandom, SliceRandom};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::TaskKind;

/// How the next task is chosen when several still have batches left.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskOrder {
    /// Uniformly at random among tasks with batches remaining.
    #[default]
    RandomRoundRobin,
    /// Cycle through tasks in order, skipping exhausted ones.
    StrictAlternation,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskBatch {
    pub kind: TaskKind,
    /// Position of the task in the list given to [`make_batches`].
    pub task: usize,
    /// Indices into that task's example list.
    pub indices: Vec<usize>,
}

/// Shuffles each task's examples, chunks them into batches of at most
/// `batch_size`, and interleaves the chunks. Every example index appears in
/// exactly one batch.
pub fn make_batches(
    tasks: &[(TaskKind, usize)],
    batch_size: usize,
    order: TaskOrder,
    rng: &mut ChaCha8Rng,
) -> Vec<TaskBatch> {
    let batch_size = batch_size.max(1);
    let mut queues: Vec<std::vec::IntoIter<Vec<usize>>> = tasks
        .iter()
        .map(|&(_, n)| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(rng);
            idx.chunks(batch_size)
                .map(<[usize]>::to_vec)
                .collect::<Vec<_>>()
                .into_iter()
        })
        .collect();
    let total: usize = queues.iter().map(|q| q.len()).sum();
    let mut out = Vec::with_capacity(total);
    let mut cursor = 0;
    while out.len() < total {
        let live: Vec<usize> = (0..queues.len()).filter(|&t| queues[t].len() > 0).collect();
        let task = match order {
            TaskOrder::RandomRoundRobin => *live.choose(rng).expect("batches remain"),
            TaskOrder::StrictAlternation => {
                let t = (0..queues.len())
                    .map(|k| (cursor + k) % queues.len())
                    .find(|t| live.contains(t))
                    .expect("batches remain");
                cursor = t + 1;
                t
            }
        };
        let indices = queues[task].next().expect("live task has a batch");
        out.push(TaskBatch {
            kind: tasks[task].0,
            task,
            indices,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn two_equal_tasks() {
        let tasks = [(TaskKind::Frame, 128), (TaskKind::Args, 128)];
        let b = make_batches(&tasks, 64, TaskOrder::default(), &mut rng(0));
        assert_eq!(b.len(), 4);
        assert_eq!(b.iter().filter(|x| x.kind == TaskKind::Frame).count(), 2);
        assert!(b.iter().all(|x| x.indices.len() == 64));
    }

    #[test]
    fn single_task_is_plain_shuffle() {
        let b = make_batches(
            &[(TaskKind::FullGen, 10)],
            4,
            TaskOrder::default(),
            &mut rng(3),
        );
        let lens: Vec<usize> = b.iter().map(|x| x.indices.len()).collect();
        assert_eq!(lens, [4, 4, 2]);
        let mut all: Vec<usize> = b.iter().flat_map(|x| x.indices.clone()).collect();
        assert_ne!(all, (0..10).collect::<Vec<_>>());
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn uneven_tasks_fixed_multiset_varying_order() {
        let tasks = [(TaskKind::Frame, 192), (TaskKind::Args, 64)];
        let mut orders = std::collections::BTreeSet::new();
        for seed in 0..100 {
            let b = make_batches(&tasks, 64, TaskOrder::default(), &mut rng(seed));
            let kinds: Vec<TaskKind> = b.iter().map(|x| x.kind).collect();
            let frames = kinds.iter().filter(|&&k| k == TaskKind::Frame).count();
            assert_eq!((kinds.len(), frames), (4, 3));
            orders.insert(kinds);
        }
        assert_eq!(orders.len(), 4);
    }

    #[test]
    fn strict_alternation() {
        let tasks = [(TaskKind::Frame, 6), (TaskKind::Args, 2)];
        let b = make_batches(&tasks, 2, TaskOrder::StrictAlternation, &mut rng(0));
        let order: Vec<usize> = b.iter().map(|x| x.task).collect();
        assert_eq!(order, [0, 1, 0, 0]);
    }

    #[test]
    fn empty_task_contributes_nothing() {
        let tasks = [(TaskKind::Frame, 0), (TaskKind::Args, 3)];
        let b = make_batches(&tasks, 2, TaskOrder::default(), &mut rng(0));
        assert!(b.iter().all(|x| x.task == 1));
        assert_eq!(b.len(), 2);
    }
}
