use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::ClusterAssignment;

pub const TASKS_PER_CLUSTER: usize = 200;
pub const HOSTS: usize = 4;
pub const POSITIONS: u8 = 5;
pub const SESSION_TASKS: usize = 25;
pub const SESSION_CONTROLS: usize = 5;
pub const MAX_CONTROL_MISSES: usize = 1;
/// Control task ids live above this value, apart from generated tasks.
pub const CONTROL_ID_BASE: u32 = 1 << 31;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImpostorTask {
    pub task_id: u32,
    pub host_cluster: u32,
    pub host_images: [u32; HOSTS],
    pub impostor_image: u32,
    /// 1-based slot of the impostor among the five shown images.
    pub impostor_position: u8,
    pub is_control: bool,
    pub control_answer: Option<u8>,
}

impl ImpostorTask {
    /// The five images in display order.
    pub fn images(&self) -> [u32; 5] {
        let mut out = [0u32; 5];
        let mut hosts = self.host_images.iter();
        for (slot, o) in out.iter_mut().enumerate() {
            *o = if slot + 1 == self.impostor_position as usize {
                self.impostor_image
            } else {
                *hosts.next().unwrap()
            };
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSet {
    pub tasks: Vec<ImpostorTask>,
    /// `(cluster, size)` of non-empty clusters too small to host a task.
    pub skipped_clusters: Vec<(u32, usize)>,
}

fn clusters_of(assignment: &ClusterAssignment) -> Result<Vec<Vec<u32>>> {
    let members = assignment.members();
    let nonempty = members.iter().filter(|m| !m.is_empty()).count();
    if nonempty < 2 {
        return Err(Error::CannotFormImpostor(nonempty));
    }
    Ok(members)
}

/// Uniform image outside `cluster`.
fn draw_impostor(members: &[Vec<u32>], cluster: usize, n: usize, rng: &mut impl Rng) -> u32 {
    let mut r = rng.random_range(0..n - members[cluster].len());
    for (c, m) in members.iter().enumerate() {
        if c == cluster {
            continue;
        }
        if r < m.len() {
            return m[r];
        }
        r -= m.len();
    }
    unreachable!("impostor index out of range")
}

/// `tasks_per_cluster` tasks for every cluster (the overflow cluster
/// included) holding at least four images. Hosts are drawn without
/// replacement within a task and afresh for every task.
pub fn generate_tasks(assignment: &ClusterAssignment, tasks_per_cluster: usize, seed: u64) -> Result<TaskSet> {
    let members = clusters_of(assignment)?;
    let n = assignment.assignments.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tasks = Vec::new();
    let mut skipped_clusters = Vec::new();
    for (c, m) in members.iter().enumerate() {
        if m.is_empty() {
            continue;
        }
        if m.len() < HOSTS {
            skipped_clusters.push((c as u32, m.len()));
            continue;
        }
        for _ in 0..tasks_per_cluster {
            let picks = index::sample(&mut rng, m.len(), HOSTS);
            let host_images = std::array::from_fn(|i| m[picks.index(i)]);
            let impostor_image = draw_impostor(&members, c, n, &mut rng);
            tasks.push(ImpostorTask {
                task_id: tasks.len() as u32,
                host_cluster: c as u32,
                host_images,
                impostor_image,
                impostor_position: rng.random_range(1..=POSITIONS),
                is_control: false,
                control_answer: None,
            });
        }
    }
    Ok(TaskSet {
        tasks,
        skipped_clusters,
    })
}

/// Pre-labelled controls: one image shown four times plus an image from a
/// different cluster. The answer is the impostor's slot.
pub fn control_tasks(assignment: &ClusterAssignment, count: usize, seed: u64) -> Result<Vec<ImpostorTask>> {
    let members = clusters_of(assignment)?;
    let n = assignment.assignments.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC0_47_20_15);
    Ok((0..count)
        .map(|i| {
            let host = rng.random_range(0..n as u32);
            let c = assignment.assignments[host as usize] as usize;
            let impostor_image = draw_impostor(&members, c, n, &mut rng);
            let pos = rng.random_range(1..=POSITIONS);
            ImpostorTask {
                task_id: CONTROL_ID_BASE + i as u32,
                host_cluster: c as u32,
                host_images: [host; HOSTS],
                impostor_image,
                impostor_position: pos,
                is_control: true,
                control_answer: Some(pos),
            }
        })
        .collect())
}

/// 20 regular tasks and 5 controls, shuffled together.
pub fn build_session(tasks: &[ImpostorTask], controls: &[ImpostorTask], rng: &mut impl Rng) -> Vec<ImpostorTask> {
    let regular = SESSION_TASKS - SESSION_CONTROLS;
    assert!(tasks.len() >= regular, "need {regular} tasks for a session, have {}", tasks.len());
    assert!(controls.len() >= SESSION_CONTROLS, "need {SESSION_CONTROLS} control tasks");
    let mut out: Vec<ImpostorTask> = index::sample(rng, tasks.len(), regular).into_iter().map(|i| tasks[i]).collect();
    out.extend(index::sample(rng, controls.len(), SESSION_CONTROLS).into_iter().map(|i| controls[i]));
    out.shuffle(rng);
    out
}
