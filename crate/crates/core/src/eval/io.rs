use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::score::Response;
use super::tasks::{ImpostorTask, HOSTS};
use crate::error::{Error, Result};

const TASK_HEADER: &str = "task_id\thost_cluster\thost1\thost2\thost3\thost4\timpostor\tposition\tis_control\tcontrol_answer";

pub fn write_tasks(path: &Path, tasks: &[ImpostorTask]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "{TASK_HEADER}")?;
    for t in tasks {
        let h = t.host_images;
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            t.task_id,
            t.host_cluster,
            h[0],
            h[1],
            h[2],
            h[3],
            t.impostor_image,
            t.impostor_position,
            u8::from(t.is_control),
            t.control_answer.map_or(String::from("-"), |a| a.to_string())
        )?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_tasks(path: &Path) -> Result<Vec<ImpostorTask>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut tasks = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if n == 0 || line.trim().is_empty() {
            continue;
        }
        let bad = || Error::format("tasks", format!("line {}: {line:?}", n + 1));
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 10 {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<u32>().map_err(|_| bad());
        let host_images: [u32; HOSTS] = [num(f[2])?, num(f[3])?, num(f[4])?, num(f[5])?];
        let impostor_position = f[7].parse::<u8>().map_err(|_| bad())?;
        if !(1..=5).contains(&impostor_position) {
            return Err(bad());
        }
        tasks.push(ImpostorTask {
            task_id: num(f[0])?,
            host_cluster: num(f[1])?,
            host_images,
            impostor_image: num(f[6])?,
            impostor_position,
            is_control: f[8] == "1",
            control_answer: if f[9] == "-" {
                None
            } else {
                Some(f[9].parse().map_err(|_| bad())?)
            },
        });
    }
    Ok(tasks)
}

fn response_line(r: &Response) -> String {
    format!("{},{},{},{}", r.annotator_id, r.task_id, r.chosen_position, r.timestamp)
}

fn check_annotator_id(id: &str) -> Result<()> {
    if id.is_empty() || id.contains([',', '\n', '\r']) {
        return Err(Error::InvalidArgument(format!("invalid annotator id {id:?}")));
    }
    Ok(())
}

/// Appends one `annotator_id,task_id,chosen_position,timestamp` record.
pub fn append_response(path: &Path, r: &Response) -> Result<()> {
    check_annotator_id(&r.annotator_id)?;
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    // One write call per record keeps concurrent appends whole.
    file.write_all(format!("{}\n", response_line(r)).as_bytes())
        .map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn write_responses(path: &Path, responses: &[Response]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for r in responses {
        check_annotator_id(&r.annotator_id)?;
        writeln!(out, "{}", response_line(r))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_responses(path: &Path) -> Result<Vec<Response>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::format("responses", format!("line {}: {line:?}", n + 1));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(bad());
        }
        out.push(Response {
            annotator_id: f[0].to_string(),
            task_id: f[1].parse().map_err(|_| bad())?,
            chosen_position: f[2].parse().map_err(|_| bad())?,
            timestamp: f[3].parse().map_err(|_| bad())?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{control_tasks, generate_tasks};
    use crate::spectral::ClusterAssignment;

    #[test]
    fn tasks_and_responses_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let a = ClusterAssignment {
            assignments: (0..30).map(|i| i % 3).collect(),
            k: 2,
            centroid_inertia: 0.0,
            empty_clusters: Vec::new(),
        };
        let mut tasks = generate_tasks(&a, 4, 1).unwrap().tasks;
        tasks.extend(control_tasks(&a, 3, 1).unwrap());
        let tp = dir.path().join("tasks.tsv");
        write_tasks(&tp, &tasks).unwrap();
        assert_eq!(read_tasks(&tp).unwrap(), tasks);

        let rp = dir.path().join("responses.log");
        let r = Response {
            annotator_id: "w-17".into(),
            task_id: 3,
            chosen_position: 2,
            timestamp: 1_700_000_000,
        };
        append_response(&rp, &r).unwrap();
        append_response(&rp, &Response { task_id: 4, ..r.clone() }).unwrap();
        assert_eq!(std::fs::read_to_string(&rp).unwrap(), "w-17,3,2,1700000000\nw-17,4,2,1700000000\n");
        assert_eq!(read_responses(&rp).unwrap().len(), 2);
        assert!(append_response(&rp, &Response { annotator_id: "a,b".into(), ..r }).is_err());
    }
}
