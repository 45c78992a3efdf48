use std::cmp::Ordering;

use crate::corpus::link_captions;
use crate::document::{Block, ReadingOrder, TextLine};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Anchor {
    Start,
    Before(usize),
    After(usize),
}

fn by_position(a: &Block, b: &Block) -> Ordering {
    a.bbox.y1().total_cmp(&b.bbox.y1()).then(a.bbox.x1().total_cmp(&b.bbox.x1()))
}

/// Derive block reading order from line reading order.
///
/// A block's score is the mean order of the lines whose centers fall inside
/// it, and scored blocks are read by ascending score. A block without lines
/// goes right before the caption linked to it; failing that, right after
/// the nearest scored block above and to its left; failing that, first.
/// Remaining ties are broken by `(y1, x1)` and then index.
pub fn autolabel_block_order(blocks: &[Block], lines: &[TextLine]) -> ReadingOrder {
    let n = blocks.len();
    let scores: Vec<Option<f64>> = blocks
        .iter()
        .map(|b| {
            let orders: Vec<f64> = lines
                .iter()
                .filter(|l| {
                    let (cx, cy) = l.bbox.center();
                    b.bbox.contains_point(cx, cy)
                })
                .map(|l| f64::from(l.order))
                .collect();
            (!orders.is_empty()).then(|| orders.iter().sum::<f64>() / orders.len() as f64)
        })
        .collect();

    let mut scored: Vec<usize> = (0..n).filter(|&i| scores[i].is_some()).collect();
    scored.sort_by(|&a, &b| {
        scores[a]
            .unwrap()
            .total_cmp(&scores[b].unwrap())
            .then(by_position(&blocks[a], &blocks[b]))
            .then(a.cmp(&b))
    });

    let mut caption_of: Vec<Option<usize>> = vec![None; n];
    for link in link_captions(blocks) {
        if let Some(t) = link.target {
            if caption_of[t].is_none() && scores[link.caption].is_some() {
                caption_of[t] = Some(link.caption);
            }
        }
    }

    let mut anchored: Vec<(Anchor, usize)> = Vec::new();
    for i in (0..n).filter(|&i| scores[i].is_none()) {
        let anchor = if let Some(c) = caption_of[i] {
            Anchor::Before(c)
        } else {
            let b = &blocks[i].bbox;
            let (bx, by) = b.center();
            scored
                .iter()
                .copied()
                .filter(|&s| blocks[s].bbox.y1() <= b.y1() && blocks[s].bbox.x1() <= b.x1())
                .min_by(|&s, &t| {
                    let dist = |k: usize| {
                        let (x, y) = blocks[k].bbox.center();
                        (x - bx).hypot(y - by)
                    };
                    dist(s).total_cmp(&dist(t)).then(s.cmp(&t))
                })
                .map_or(Anchor::Start, Anchor::After)
        };
        anchored.push((anchor, i));
    }
    anchored.sort_by(|a, b| by_position(&blocks[a.1], &blocks[b.1]).then(a.1.cmp(&b.1)));

    let group = |anchor: Anchor| anchored.iter().filter(move |(a, _)| *a == anchor).map(|&(_, i)| i);
    let mut sequence: Vec<usize> = group(Anchor::Start).collect();
    for &s in &scored {
        sequence.extend(group(Anchor::Before(s)));
        sequence.push(s);
        sequence.extend(group(Anchor::After(s)));
    }
    ReadingOrder::from_sequence(&sequence).expect("every block placed once")
}
