//! Social tripartite graph: users, groups, items and their interaction edges.
//!
//! Edges are undirected, unweighted and deduplicated. The graph keeps both
//! the flat edge sets and per-node adjacency indexes so neighbor lookups are
//! O(degree). Instances are immutable after construction.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::SeededRng;

/// Which of the three bipartite relations an edge file encodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relation {
    UserGroup,
    UserItem,
    GroupItem,
}

impl Relation {
    fn names(self) -> (&'static str, &'static str) {
        match self {
            Relation::UserGroup => ("user", "group"),
            Relation::UserItem => ("user", "item"),
            Relation::GroupItem => ("group", "item"),
        }
    }
}

/// Deduplicated edge set for one relation, with inferred id-space sizes.
#[derive(Clone, Debug)]
pub struct EdgeList {
    pub edges: Vec<(u32, u32)>,
    pub n_src: usize,
    pub n_dst: usize,
}

/// Parse a TAB-separated edge list.
///
/// Each non-empty line is `<src><TAB><dst>` with non-negative decimal ids.
/// Lines starting with `#` are comments, except a `# nodes: <n_src> <n_dst>`
/// header which overrides the inferred (max id + 1) id-space sizes.
pub fn load_edge_list(path: impl AsRef<Path>, relation: Relation) -> Result<EdgeList> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (src_name, dst_name) = relation.names();

    let mut declared: Option<(usize, usize)> = None;
    let mut edges = BTreeSet::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(spec) = rest.trim().strip_prefix("nodes:") {
                let mut it = spec.split_whitespace();
                let parse = |tok: Option<&str>| -> Result<usize> {
                    tok.ok_or_else(|| Error::Parse {
                        path: path.into(),
                        line: lineno,
                        msg: "header needs two counts: `# nodes: <n_src> <n_dst>`".into(),
                    })?
                    .parse()
                    .map_err(|_| Error::Parse {
                        path: path.into(),
                        line: lineno,
                        msg: "header counts must be non-negative integers".into(),
                    })
                };
                declared = Some((parse(it.next())?, parse(it.next())?));
            }
            continue;
        }
        let mut fields = line.split('\t');
        let mut parse_id = |name: &str| -> Result<u32> {
            let tok = fields.next().ok_or_else(|| Error::Parse {
                path: path.into(),
                line: lineno,
                msg: format!("missing {name} id (expected `<src><TAB><dst>`)"),
            })?;
            tok.trim().parse().map_err(|_| Error::Parse {
                path: path.into(),
                line: lineno,
                msg: format!("malformed {name} id {tok:?}"),
            })
        };
        let src = parse_id(src_name)?;
        let dst = parse_id(dst_name)?;
        edges.insert((src, dst));
    }
    if edges.is_empty() {
        return Err(Error::Data(format!(
            "edge list {} contains no edges",
            path.display()
        )));
    }

    let max_src = edges.iter().map(|e| e.0).max().unwrap() as usize;
    let max_dst = edges.iter().map(|e| e.1).max().unwrap() as usize;
    let (n_src, n_dst) = declared.unwrap_or((max_src + 1, max_dst + 1));
    if max_src >= n_src || max_dst >= n_dst {
        return Err(Error::Data(format!(
            "{}: edge ids exceed declared node counts ({src_name} max {max_src} vs {n_src}, \
             {dst_name} max {max_dst} vs {n_dst})",
            path.display()
        )));
    }
    Ok(EdgeList {
        edges: edges.into_iter().collect(),
        n_src,
        n_dst,
    })
}

/// The social tripartite graph.
#[derive(Clone, Debug, PartialEq)]
pub struct TripartiteGraph {
    n_users: usize,
    n_groups: usize,
    n_items: usize,
    ug_edges: Vec<(u32, u32)>,
    ui_edges: Vec<(u32, u32)>,
    gi_edges: Vec<(u32, u32)>,
    groups_of_user: Vec<Vec<u32>>,
    users_of_group: Vec<Vec<u32>>,
    items_of_user: Vec<Vec<u32>>,
    users_of_item: Vec<Vec<u32>>,
    items_of_group: Vec<Vec<u32>>,
    groups_of_item: Vec<Vec<u32>>,
}

fn index_edges(edges: &[(u32, u32)], n_src: usize, n_dst: usize) -> (Vec<Vec<u32>>, Vec<Vec<u32>>) {
    let mut by_src = vec![Vec::new(); n_src];
    let mut by_dst = vec![Vec::new(); n_dst];
    for &(s, d) in edges {
        by_src[s as usize].push(d);
        by_dst[d as usize].push(s);
    }
    (by_src, by_dst)
}

impl TripartiteGraph {
    /// Build a graph from explicit sizes and edge sets. Edges are
    /// deduplicated and sorted; out-of-range ids are rejected.
    pub fn new(
        n_users: usize,
        n_groups: usize,
        n_items: usize,
        ug: Vec<(u32, u32)>,
        ui: Vec<(u32, u32)>,
        gi: Vec<(u32, u32)>,
    ) -> Result<Self> {
        let normalize = |edges: Vec<(u32, u32)>,
                         n_src: usize,
                         n_dst: usize,
                         what: &str|
         -> Result<Vec<(u32, u32)>> {
            let set: BTreeSet<(u32, u32)> = edges.into_iter().collect();
            for &(s, d) in &set {
                if s as usize >= n_src || d as usize >= n_dst {
                    return Err(Error::Data(format!(
                        "{what} edge ({s}, {d}) outside id spaces {n_src} x {n_dst}"
                    )));
                }
            }
            Ok(set.into_iter().collect())
        };
        let ug_edges = normalize(ug, n_users, n_groups, "user-group")?;
        let ui_edges = normalize(ui, n_users, n_items, "user-item")?;
        let gi_edges = normalize(gi, n_groups, n_items, "group-item")?;

        let (groups_of_user, users_of_group) = index_edges(&ug_edges, n_users, n_groups);
        let (items_of_user, users_of_item) = index_edges(&ui_edges, n_users, n_items);
        let (items_of_group, groups_of_item) = index_edges(&gi_edges, n_groups, n_items);

        Ok(Self {
            n_users,
            n_groups,
            n_items,
            ug_edges,
            ui_edges,
            gi_edges,
            groups_of_user,
            users_of_group,
            items_of_user,
            users_of_item,
            items_of_group,
            groups_of_item,
        })
    }

    /// Assemble a graph from the three relation edge lists; id-space sizes
    /// are the maximum seen for each node type across files.
    pub fn from_edge_lists(ug: &EdgeList, ui: &EdgeList, gi: &EdgeList) -> Result<Self> {
        let n_users = ug.n_src.max(ui.n_src);
        let n_groups = ug.n_dst.max(gi.n_src);
        let n_items = ui.n_dst.max(gi.n_dst);
        Self::new(
            n_users,
            n_groups,
            n_items,
            ug.edges.clone(),
            ui.edges.clone(),
            gi.edges.clone(),
        )
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }
    pub fn n_groups(&self) -> usize {
        self.n_groups
    }
    pub fn n_items(&self) -> usize {
        self.n_items
    }
    pub fn ug_edges(&self) -> &[(u32, u32)] {
        &self.ug_edges
    }
    pub fn ui_edges(&self) -> &[(u32, u32)] {
        &self.ui_edges
    }
    pub fn gi_edges(&self) -> &[(u32, u32)] {
        &self.gi_edges
    }

    pub fn groups_of_user(&self, u: usize) -> &[u32] {
        &self.groups_of_user[u]
    }
    pub fn users_of_group(&self, g: usize) -> &[u32] {
        &self.users_of_group[g]
    }
    pub fn items_of_user(&self, u: usize) -> &[u32] {
        &self.items_of_user[u]
    }
    pub fn users_of_item(&self, i: usize) -> &[u32] {
        &self.users_of_item[i]
    }
    pub fn items_of_group(&self, g: usize) -> &[u32] {
        &self.items_of_group[g]
    }
    pub fn groups_of_item(&self, i: usize) -> &[u32] {
        &self.groups_of_item[i]
    }

    pub fn groups_of_user_all(&self) -> &[Vec<u32>] {
        &self.groups_of_user
    }
    pub fn users_of_group_all(&self) -> &[Vec<u32>] {
        &self.users_of_group
    }
    pub fn items_of_user_all(&self) -> &[Vec<u32>] {
        &self.items_of_user
    }
    pub fn users_of_item_all(&self) -> &[Vec<u32>] {
        &self.users_of_item
    }
    pub fn items_of_group_all(&self) -> &[Vec<u32>] {
        &self.items_of_group
    }
    pub fn groups_of_item_all(&self) -> &[Vec<u32>] {
        &self.groups_of_item
    }

    pub fn has_ug_edge(&self, u: u32, g: u32) -> bool {
        self.groups_of_user[u as usize].binary_search(&g).is_ok()
    }

    /// Same node sizes, different user-group edges; item relations untouched.
    pub fn with_ug_edges(&self, ug: Vec<(u32, u32)>) -> Result<Self> {
        Self::new(
            self.n_users,
            self.n_groups,
            self.n_items,
            ug,
            self.ui_edges.clone(),
            self.gi_edges.clone(),
        )
    }
}

/// Per-user train/validation/test split of the user-group edges.
///
/// Item relations are never split; they appear in full in `train`.
#[derive(Clone, Debug)]
pub struct DatasetSplit {
    pub train: TripartiteGraph,
    pub validation_ug: Vec<(u32, u32)>,
    pub test_ug: Vec<(u32, u32)>,
}

/// Split each user's groups into train/validation/test.
///
/// Per user: a seeded uniform permutation of her groups is cut at
/// `ceil(degree * train_ratio)`; everything after the cut is test.
/// Validation takes `floor(degree * valid_ratio)` edges from the end of the
/// train block (never emptying it), so the test fraction is unaffected by
/// the validation carve. Users with a single group keep it in train.
pub fn split_per_user(
    graph: &TripartiteGraph,
    train_ratio: f64,
    valid_ratio: f64,
    seed: u64,
) -> Result<DatasetSplit> {
    if !(train_ratio > 0.0 && valid_ratio >= 0.0 && train_ratio + valid_ratio <= 1.0) {
        return Err(Error::Config(format!(
            "split ratios must satisfy 0 < train and train + valid <= 1, got ({train_ratio}, {valid_ratio})"
        )));
    }
    if graph.ug_edges.is_empty() {
        return Err(Error::Data("graph has no user-group edges to split".into()));
    }

    let mut rng = SeededRng::new(seed);
    let mut train = Vec::new();
    let mut validation = Vec::new();
    let mut test = Vec::new();
    for u in 0..graph.n_users {
        let mut groups: Vec<u32> = graph.groups_of_user[u].clone();
        if groups.is_empty() {
            continue;
        }
        rng.shuffle(&mut groups);
        let deg = groups.len();
        let n_block = ((deg as f64) * train_ratio).ceil() as usize;
        let n_block = n_block.clamp(1, deg);
        let n_valid = (((deg as f64) * valid_ratio).floor() as usize).min(n_block - 1);
        let u = u as u32;
        for (pos, g) in groups.into_iter().enumerate() {
            if pos < n_block - n_valid {
                train.push((u, g));
            } else if pos < n_block {
                validation.push((u, g));
            } else {
                test.push((u, g));
            }
        }
    }
    train.sort_unstable();
    validation.sort_unstable();
    test.sort_unstable();

    let train_graph = graph.with_ug_edges(train)?;
    Ok(DatasetSplit {
        train: train_graph,
        validation_ug: validation,
        test_ug: test,
    })
}

/// Cap every user's train groups at `k` by keeping a seeded uniform subset.
/// Validation and test edges are untouched.
pub fn cap_user_groups(split: &DatasetSplit, k: usize, seed: u64) -> Result<DatasetSplit> {
    if k < 1 {
        return Err(Error::Config("cold-start threshold k must be >= 1".into()));
    }
    let graph = &split.train;
    let mut rng = SeededRng::new(seed);
    let mut capped = Vec::new();
    for u in 0..graph.n_users {
        let mut groups = graph.groups_of_user[u].clone();
        if groups.len() > k {
            rng.shuffle(&mut groups);
            groups.truncate(k);
            groups.sort_unstable();
        }
        capped.extend(groups.into_iter().map(|g| (u as u32, g)));
    }
    Ok(DatasetSplit {
        train: graph.with_ug_edges(capped)?,
        validation_ug: split.validation_ug.clone(),
        test_ug: split.test_ug.clone(),
    })
}

/// Counts, ratios and seed describing a written split manifest.
#[derive(Debug, Serialize, Deserialize)]
pub struct SplitMetadata {
    pub n_users: usize,
    pub n_groups: usize,
    pub n_items: usize,
    pub train_ug_edges: usize,
    pub validation_ug_edges: usize,
    pub test_ug_edges: usize,
    pub train_ratio: f64,
    pub valid_ratio: f64,
    pub seed: u64,
}

fn write_edges(path: &Path, edges: &[(u32, u32)]) -> Result<()> {
    let mut buf = String::with_capacity(edges.len() * 8);
    for &(s, d) in edges {
        buf.push_str(&format!("{s}\t{d}\n"));
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(buf.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

/// Write the split as three edge-list files plus a JSON metadata file.
pub fn write_split_manifest(
    dir: impl AsRef<Path>,
    split: &DatasetSplit,
    train_ratio: f64,
    valid_ratio: f64,
    seed: u64,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_edges(&dir.join("train_ug.tsv"), split.train.ug_edges())?;
    write_edges(&dir.join("validation_ug.tsv"), &split.validation_ug)?;
    write_edges(&dir.join("test_ug.tsv"), &split.test_ug)?;
    let meta = SplitMetadata {
        n_users: split.train.n_users(),
        n_groups: split.train.n_groups(),
        n_items: split.train.n_items(),
        train_ug_edges: split.train.ug_edges().len(),
        validation_ug_edges: split.validation_ug.len(),
        test_ug_edges: split.test_ug.len(),
        train_ratio,
        valid_ratio,
        seed,
    };
    let path = dir.join("split_meta.json");
    let json = serde_json::to_string_pretty(&meta)
        .map_err(|e| Error::Data(format!("metadata serialization: {e}")))?;
    fs::write(&path, json).map_err(|e| Error::io(path, e))
}
