//! Cluster reports: exemplar images per cluster (highest affinity degree
//! first), sizes and source-tag breakdowns, as JSON and as HTML.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use memegraph::affinity::SparseAffinity;
use memegraph::corpus::CorpusSnapshot;
use memegraph::spectral::{cluster_stats, ClusterAssignment, ClusterStats};

pub const DEFAULT_TOP: usize = 9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exemplar {
    pub image_id: u32,
    pub path: String,
    /// Number of affinity edges at this image.
    pub degree: u32,
    pub weighted_degree: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSection {
    pub cluster: u32,
    pub overflow: bool,
    pub size: usize,
    pub exemplars: Vec<Exemplar>,
    /// Source tag → image count; untagged images count under "".
    pub source_tags: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeSummary {
    pub clusters: usize,
    pub empty: usize,
    pub overflow: usize,
    pub min: usize,
    pub median: f64,
    pub max: usize,
}

impl From<&ClusterStats> for SizeSummary {
    fn from(s: &ClusterStats) -> Self {
        SizeSummary {
            clusters: s.sizes.len(),
            empty: s.empty,
            overflow: s.overflow,
            min: s.min,
            median: s.median,
            max: s.max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub images: usize,
    pub k: usize,
    pub sizes: SizeSummary,
    /// Regular clusters by descending size, then the overflow cluster if
    /// it has members.
    pub sections: Vec<ClusterSection>,
}

pub fn build_report(
    assignment: &ClusterAssignment,
    snapshot: &CorpusSnapshot,
    affinity: &SparseAffinity,
    top: usize,
) -> ClusterReport {
    let degree = affinity.edge_degrees();
    let weighted = affinity.degrees();
    let mut sections: Vec<ClusterSection> = assignment
        .members()
        .into_iter()
        .enumerate()
        .filter(|(_, m)| !m.is_empty())
        .map(|(c, mut members)| {
            members.sort_by(|&a, &b| {
                let (a, b) = (a as usize, b as usize);
                degree[b]
                    .cmp(&degree[a])
                    .then(weighted[b].total_cmp(&weighted[a]))
                    .then(a.cmp(&b))
            });
            let mut source_tags = BTreeMap::new();
            for &id in &members {
                let tag = snapshot
                    .get(id)
                    .and_then(|r| r.source_tag.clone())
                    .unwrap_or_default();
                *source_tags.entry(tag).or_insert(0) += 1;
            }
            ClusterSection {
                cluster: c as u32,
                overflow: c == assignment.k,
                size: members.len(),
                exemplars: members
                    .iter()
                    .take(top)
                    .map(|&id| Exemplar {
                        image_id: id,
                        path: snapshot
                            .get(id)
                            .map(|r| r.path.display().to_string())
                            .unwrap_or_default(),
                        degree: degree[id as usize],
                        weighted_degree: weighted[id as usize],
                    })
                    .collect(),
                source_tags,
            }
        })
        .collect();
    sections.sort_by(|a, b| a.overflow.cmp(&b.overflow).then(b.size.cmp(&a.size)).then(a.cluster.cmp(&b.cluster)));
    ClusterReport {
        images: assignment.assignments.len(),
        k: assignment.k,
        sizes: SizeSummary::from(&cluster_stats(assignment)),
        sections,
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

pub fn render_html(report: &ClusterReport) -> String {
    let mut h = String::new();
    let _ = write!(
        h,
        "<!doctype html>\n<html><head><meta charset=\"utf-8\"><title>memegraph clusters</title>\n\
         <style>body{{font-family:sans-serif;margin:2em}}.grid{{display:grid;grid-template-columns:repeat(3,160px);gap:6px}}\
         .grid img{{width:160px;height:160px;object-fit:cover}}section{{margin-bottom:2em}}</style></head><body>\n"
    );
    let s = &report.sizes;
    let _ = writeln!(
        h,
        "<h1>{} images in {} clusters</h1>\n<p>sizes: min {}, median {}, max {}; overflow {}; empty {}</p>",
        report.images, s.clusters, s.min, s.median, s.max, s.overflow, s.empty
    );
    for sec in &report.sections {
        let title = if sec.overflow {
            format!("Unclustered ({} images without edges)", sec.size)
        } else {
            format!("Cluster {} ({} images)", sec.cluster, sec.size)
        };
        let _ = writeln!(h, "<section><h2>{}</h2><div class=\"grid\">", escape(&title));
        for e in &sec.exemplars {
            let _ = writeln!(
                h,
                "<img src=\"{}\" alt=\"image {}\" title=\"image {} degree {}\">",
                escape(&e.path),
                e.image_id,
                e.image_id,
                e.degree
            );
        }
        let tags: Vec<String> = sec
            .source_tags
            .iter()
            .map(|(t, c)| format!("{}: {c}", if t.is_empty() { "(untagged)" } else { t }))
            .collect();
        let _ = writeln!(h, "</div><p>{}</p></section>", escape(&tags.join(", ")));
    }
    h.push_str("</body></html>\n");
    h
}

#[cfg(test)]
mod tests {
    use std::path::PathBuf;

    use memegraph::corpus::ImageRecord;

    use super::*;

    fn snapshot(n: usize) -> CorpusSnapshot {
        CorpusSnapshot {
            records: (0..n)
                .map(|i| ImageRecord {
                    image_id: i as u32,
                    path: PathBuf::from(format!("/img/{i}.png")),
                    content_hash: [i as u8; 32],
                    source_tag: (i % 2 == 0).then(|| "even".to_string()),
                    width: 10,
                    height: 10,
                })
                .collect(),
            created_at: 0,
            manifest_digest: [0; 32],
        }
    }

    fn three_clusters() -> (ClusterAssignment, SparseAffinity) {
        // Clusters of 12, 3 and 2 images; image 16 has no edges.
        let mut assignments = vec![0u32; 12];
        assignments.extend([1, 1, 1, 2, 3]);
        let mut edges = Vec::new();
        for i in 1..12u32 {
            edges.push((0, i, 5.0));
        }
        edges.push((1, 2, 1.0));
        edges.extend([(12, 13, 2.0), (13, 14, 2.0), (14, 15, 1.0)]);
        let a = SparseAffinity::from_weights(17, edges);
        let c = ClusterAssignment {
            assignments,
            k: 3,
            centroid_inertia: 0.0,
            empty_clusters: vec![],
        };
        (c, a)
    }

    #[test]
    fn sections_and_exemplar_order() {
        let (c, a) = three_clusters();
        let r = build_report(&c, &snapshot(17), &a, DEFAULT_TOP);
        assert_eq!(r.sections.len(), 4);
        let big = &r.sections[0];
        assert_eq!((big.cluster, big.size, big.exemplars.len()), (0, 12, 9));
        // Hub first, then the two nodes with an extra edge.
        let ids: Vec<u32> = big.exemplars.iter().map(|e| e.image_id).collect();
        assert_eq!(&ids[..3], &[0, 1, 2]);
        assert_eq!(big.source_tags["even"], 6);
        assert!(r.sections[3].overflow);
        assert_eq!(r.sections[3].exemplars[0].image_id, 16);
    }

    #[test]
    fn empty_overflow_is_omitted() {
        let (mut c, a) = three_clusters();
        c.assignments[16] = 2;
        let r = build_report(&c, &snapshot(17), &a, DEFAULT_TOP);
        assert_eq!(r.sections.len(), 3);
        assert!(r.sections.iter().all(|s| !s.overflow && s.exemplars.len() <= 9));
    }

    #[test]
    fn json_round_trip_and_html() {
        let (c, a) = three_clusters();
        let r = build_report(&c, &snapshot(17), &a, DEFAULT_TOP);
        let json = serde_json::to_string(&r).unwrap();
        let back: ClusterReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
        let value: serde_json::Value = serde_json::from_str(&json).unwrap();
        for key in ["images", "k", "sizes", "sections"] {
            assert!(value.get(key).is_some(), "missing {key}");
        }
        let html = render_html(&r);
        assert_eq!(html.matches("<section>").count(), 4);
        assert!(html.contains("/img/0.png"));
        assert!(escape("<a&b>") == "&lt;a&amp;b&gt;");
    }
}
