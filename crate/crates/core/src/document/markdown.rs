use serde::{Deserialize, Serialize};

use super::{Block, Category, ReadingOrder};
use crate::corpus::link_captions;
use crate::error::{invalid, Result};

/// Blocks in reading order with their recognized content, plus the rendered markdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedDocument {
    pub page_id: String,
    /// Blocks sorted by reading order; `content` holds the recognized text.
    pub blocks: Vec<Block>,
    pub markdown: String,
}

/// Render one block. `caption` is the text of the caption linked to a figure.
pub fn render_block(category: Category, content: &str, id: &str, caption: Option<&str>) -> String {
    match category {
        Category::Title => format!("# {content}"),
        Category::Table => content.to_string(),
        Category::Formula => format!("$$\n{content}\n$$"),
        Category::Figure => format!("![{}]({id})", caption.unwrap_or("")),
        _ => content.to_string(),
    }
}

/// Order `blocks` by `order` (ranks) and render the markdown document.
pub fn assemble_document(
    page_id: &str,
    blocks: &[Block],
    contents: &[String],
    order: &ReadingOrder,
) -> Result<ParsedDocument> {
    if blocks.len() != contents.len() || blocks.len() != order.len() {
        return Err(invalid(format!(
            "assemble: {} blocks, {} contents, order of {}",
            blocks.len(),
            contents.len(),
            order.len()
        )));
    }
    let links = link_captions(blocks);
    let mut figure_caption: Vec<Option<usize>> = vec![None; blocks.len()];
    for link in &links {
        if let Some(t) = link.target {
            if blocks[t].category == Category::Figure && figure_caption[t].is_none() {
                figure_caption[t] = Some(link.caption);
            }
        }
    }

    let mut ordered = Vec::with_capacity(blocks.len());
    let mut rendered = Vec::with_capacity(blocks.len());
    for idx in order.sequence() {
        let block = &blocks[idx];
        let caption = figure_caption[idx].map(|c| contents[c].as_str());
        rendered.push(render_block(block.category, &contents[idx], &block.id, caption));
        let mut b = block.clone();
        b.content = Some(contents[idx].clone());
        ordered.push(b);
    }
    let markdown = if rendered.is_empty() {
        String::new()
    } else {
        let mut md = rendered.join("\n\n");
        md.push('\n');
        md
    };
    Ok(ParsedDocument {
        page_id: page_id.to_string(),
        blocks: ordered,
        markdown,
    })
}
