//! Ordered labeled trees for table markup and Zhang–Shasha tree edit distance.

use super::edit::{normalize_text, normalized_edit_distance};
use crate::error::{invalid, Result};
use crate::html::{is_void, tokenize, Token};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableNode {
    pub tag: String,
    pub colspan: u32,
    pub rowspan: u32,
    /// Cell text; empty on structural nodes.
    pub text: String,
    pub children: Vec<usize>,
}

impl TableNode {
    pub fn new(tag: impl Into<String>) -> Self {
        Self {
            tag: tag.into(),
            colspan: 1,
            rowspan: 1,
            text: String::new(),
            children: Vec::new(),
        }
    }

    pub fn cell(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            ..Self::new("td")
        }
    }

    pub fn is_cell(&self) -> bool {
        self.tag == "td" || self.tag == "th"
    }
}

/// Arena-backed ordered tree. Node 0 is the root when the tree is non-empty.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TableTree {
    nodes: Vec<TableNode>,
}

const STRUCTURAL: [&str; 8] = ["table", "thead", "tbody", "tfoot", "tr", "td", "th", "caption"];

impl TableTree {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, i: usize) -> &TableNode {
        &self.nodes[i]
    }

    /// Append `node` under `parent`, or as the root when `parent` is `None`.
    pub fn add(&mut self, parent: Option<usize>, node: TableNode) -> Result<usize> {
        let id = self.nodes.len();
        match parent {
            None if self.nodes.is_empty() => {}
            None => return Err(invalid("tree already has a root")),
            Some(p) if p < id => self.nodes[p].children.push(id),
            Some(p) => return Err(invalid(format!("unknown parent node {p}"))),
        }
        self.nodes.push(node);
        Ok(id)
    }

    /// Parse table markup. Only table-structure elements become nodes; any
    /// markup inside a cell contributes its text to the cell. Markup before
    /// the first `<table>` is skipped.
    pub fn parse(markup: &str) -> Result<Self> {
        let tokens = tokenize(markup)?;
        let start = tokens
            .iter()
            .position(|t| matches!(t, Token::Open { name, .. } if name == "table"))
            .ok_or_else(|| invalid("no <table> element"))?;
        let mut tree = TableTree::empty();
        let mut stack: Vec<usize> = Vec::new();
        // inline elements open inside the current cell
        let mut inline: Vec<String> = Vec::new();
        for tok in &tokens[start..] {
            match tok {
                Token::Open { name, attrs, self_closing } => {
                    if !STRUCTURAL.contains(&name.as_str()) {
                        if name == "br" {
                            if let Some(&top) = stack.last() {
                                tree.nodes[top].text.push(' ');
                            }
                        } else if !self_closing && !is_void(name) {
                            inline.push(name.clone());
                        }
                        continue;
                    }
                    if !inline.is_empty() {
                        return Err(invalid(format!("<{name}> inside inline <{}>", inline[inline.len() - 1])));
                    }
                    if stack.is_empty() && !tree.is_empty() {
                        return Err(invalid("content after the table"));
                    }
                    let mut node = TableNode::new(name.as_str());
                    for (k, v) in attrs {
                        let span = || {
                            v.trim()
                                .parse::<u32>()
                                .ok()
                                .filter(|&s| s >= 1)
                                .ok_or_else(|| invalid(format!("bad {k}=\"{v}\"")))
                        };
                        match k.as_str() {
                            "colspan" => node.colspan = span()?,
                            "rowspan" => node.rowspan = span()?,
                            _ => {}
                        }
                    }
                    let id = tree.add(stack.last().copied(), node)?;
                    if !self_closing {
                        stack.push(id);
                    }
                }
                Token::Close { name } => {
                    if !STRUCTURAL.contains(&name.as_str()) {
                        match inline.pop() {
                            Some(open) if open == *name => continue,
                            _ => return Err(invalid(format!("unbalanced </{name}>"))),
                        }
                    }
                    let top = stack.pop().ok_or_else(|| invalid(format!("</{name}> without opening tag")))?;
                    if tree.nodes[top].tag != *name {
                        return Err(invalid(format!("</{name}> closes <{}>", tree.nodes[top].tag)));
                    }
                    if stack.is_empty() {
                        break;
                    }
                }
                Token::Text(t) => {
                    if let Some(&top) = stack.last() {
                        if tree.nodes[top].is_cell() {
                            tree.nodes[top].text.push_str(t);
                        } else if !t.trim().is_empty() {
                            return Err(invalid(format!("text outside a cell in <{}>", tree.nodes[top].tag)));
                        }
                    }
                }
            }
        }
        if !stack.is_empty() {
            return Err(invalid("<table> never closed"));
        }
        for n in &mut tree.nodes {
            n.text = normalize_text(&n.text);
        }
        Ok(tree)
    }

    /// Node ids in post-order.
    fn postorder(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nodes.len());
        if self.nodes.is_empty() {
            return out;
        }
        let mut stack = vec![(0usize, false)];
        while let Some((n, expanded)) = stack.pop() {
            if expanded {
                out.push(n);
            } else {
                stack.push((n, true));
                for &c in self.nodes[n].children.iter().rev() {
                    stack.push((c, false));
                }
            }
        }
        out
    }
}

/// Relabel cost between two nodes under the TEDS cost model.
pub fn rename_cost(a: &TableNode, b: &TableNode, structure_only: bool) -> f64 {
    if a.tag != b.tag || a.colspan != b.colspan || a.rowspan != b.rowspan {
        return 1.0;
    }
    if a.is_cell() && !structure_only {
        normalized_edit_distance(&a.text, &b.text)
    } else {
        0.0
    }
}

/// Post-order view used by Zhang–Shasha: 1-based node arrays, leftmost
/// leaf descendants and keyroots.
struct Indexed<'a> {
    nodes: Vec<&'a TableNode>,
    lld: Vec<usize>,
    keyroots: Vec<usize>,
}

impl<'a> Indexed<'a> {
    fn new(tree: &'a TableTree) -> Self {
        let post = tree.postorder();
        let n = post.len();
        let mut pos = vec![0; tree.nodes.len()];
        for (i, &id) in post.iter().enumerate() {
            pos[id] = i + 1;
        }
        let mut nodes = Vec::with_capacity(n + 1);
        let mut lld = vec![0; n + 1];
        for (i, &id) in post.iter().enumerate() {
            let node = &tree.nodes[id];
            nodes.push(node);
            lld[i + 1] = match node.children.first() {
                Some(&c) => lld[pos[c]],
                None => i + 1,
            };
        }
        // keyroots: the highest node for each distinct leftmost leaf
        let mut keyroots = Vec::new();
        let mut seen = vec![false; n + 1];
        for i in (1..=n).rev() {
            if !seen[lld[i]] {
                seen[lld[i]] = true;
                keyroots.push(i);
            }
        }
        keyroots.reverse();
        Self { nodes, lld, keyroots }
    }

    fn node(&self, i: usize) -> &TableNode {
        self.nodes[i - 1]
    }
}

/// Zhang–Shasha ordered tree edit distance with unit insert/delete costs
/// and [`rename_cost`] for relabeling.
pub fn tree_edit_distance(t1: &TableTree, t2: &TableTree, structure_only: bool) -> f64 {
    if t1.is_empty() || t2.is_empty() {
        return (t1.len() + t2.len()) as f64;
    }
    let a = Indexed::new(t1);
    let b = Indexed::new(t2);
    let (n, m) = (t1.len(), t2.len());
    let mut td = vec![vec![0.0f64; m + 1]; n + 1];
    let mut fd = vec![vec![0.0f64; m + 2]; n + 2];
    for &i in &a.keyroots {
        for &j in &b.keyroots {
            let (li, lj) = (a.lld[i], b.lld[j]);
            // fd indices are offset so that li-1 and lj-1 map to 0
            fd[0][0] = 0.0;
            for x in li..=i {
                fd[x - li + 1][0] = fd[x - li][0] + 1.0;
            }
            for y in lj..=j {
                fd[0][y - lj + 1] = fd[0][y - lj] + 1.0;
            }
            for x in li..=i {
                for y in lj..=j {
                    let (fx, fy) = (x - li + 1, y - lj + 1);
                    let del = fd[fx - 1][fy] + 1.0;
                    let ins = fd[fx][fy - 1] + 1.0;
                    if a.lld[x] == li && b.lld[y] == lj {
                        let ren = fd[fx - 1][fy - 1] + rename_cost(a.node(x), b.node(y), structure_only);
                        let v = del.min(ins).min(ren);
                        fd[fx][fy] = v;
                        td[x][y] = v;
                    } else {
                        let px = a.lld[x] - li;
                        let py = b.lld[y] - lj;
                        let sub = fd[px][py] + td[x][y];
                        fd[fx][fy] = del.min(ins).min(sub);
                    }
                }
            }
        }
    }
    td[n][m]
}

/// Tree-edit-distance similarity of two table markups. Unparseable input
/// is scored as an empty tree, so a broken prediction scores 0.
pub fn teds(pred: &str, gt: &str, structure_only: bool) -> f64 {
    let p = TableTree::parse(pred).unwrap_or_default();
    let g = TableTree::parse(gt).unwrap_or_default();
    teds_trees(&p, &g, structure_only)
}

pub fn teds_trees(pred: &TableTree, gt: &TableTree, structure_only: bool) -> f64 {
    let largest = pred.len().max(gt.len());
    if largest == 0 {
        return 1.0;
    }
    (1.0 - tree_edit_distance(pred, gt, structure_only) / largest as f64).clamp(0.0, 1.0)
}
