//! Heterogeneous MIS graph construction: five node types, four forward edge
//! rules, optional typed reverse edges, per-type caps and drop ablations.
//!
//! Edge directions follow the construction rules literally (article to
//! question, related question to question, related answer to related
//! question, comment to article). Without reverses, comment and
//! related-answer nodes have empty in-neighborhoods and are never updated by
//! the graph layers, so typed reverse edges are enabled by default; a
//! forward-only mode remains available.

use crate::dataset::TrainingSample;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("unknown node id {0}")]
    UnknownNode(usize),
    #[error("reverse edges already present")]
    ReversesAlreadyPresent,
}

/// The five node types of the MIS graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeType {
    Question,
    Article,
    Comment,
    RelatedQuestion,
    RelatedAnswer,
}

impl NodeType {
    pub const ALL: [NodeType; 5] = [
        NodeType::Question,
        NodeType::Article,
        NodeType::Comment,
        NodeType::RelatedQuestion,
        NodeType::RelatedAnswer,
    ];

    /// Directly retrieved node types carry a BM25 score.
    pub fn has_retrieval_score(self) -> bool {
        matches!(self, NodeType::Article | NodeType::RelatedQuestion)
    }
}

impl fmt::Display for NodeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            NodeType::Question => "Question",
            NodeType::Article => "Article",
            NodeType::Comment => "Comment",
            NodeType::RelatedQuestion => "RelatedQuestion",
            NodeType::RelatedAnswer => "RelatedAnswer",
        };
        write!(f, "{name}")
    }
}

/// The four forward edge rules plus their typed reverses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EdgeType {
    ArticleToQuestion,
    RelQToQuestion,
    RelAToRelQ,
    CommentToArticle,
    QuestionToArticle,
    QuestionToRelQ,
    RelQToRelA,
    ArticleToComment,
}

impl EdgeType {
    pub const ALL: [EdgeType; 8] = [
        EdgeType::ArticleToQuestion,
        EdgeType::RelQToQuestion,
        EdgeType::RelAToRelQ,
        EdgeType::CommentToArticle,
        EdgeType::QuestionToArticle,
        EdgeType::QuestionToRelQ,
        EdgeType::RelQToRelA,
        EdgeType::ArticleToComment,
    ];

    /// (source type, target type) fixed by the edge type.
    pub fn signature(self) -> (NodeType, NodeType) {
        use EdgeType::*;
        use NodeType::*;
        match self {
            ArticleToQuestion => (Article, Question),
            RelQToQuestion => (RelatedQuestion, Question),
            RelAToRelQ => (RelatedAnswer, RelatedQuestion),
            CommentToArticle => (Comment, Article),
            QuestionToArticle => (Question, Article),
            QuestionToRelQ => (Question, RelatedQuestion),
            RelQToRelA => (RelatedQuestion, RelatedAnswer),
            ArticleToComment => (Article, Comment),
        }
    }

    pub fn is_reverse(self) -> bool {
        use EdgeType::*;
        matches!(self, QuestionToArticle | QuestionToRelQ | RelQToRelA | ArticleToComment)
    }

    pub fn reverse(self) -> EdgeType {
        use EdgeType::*;
        match self {
            ArticleToQuestion => QuestionToArticle,
            RelQToQuestion => QuestionToRelQ,
            RelAToRelQ => RelQToRelA,
            CommentToArticle => ArticleToComment,
            QuestionToArticle => ArticleToQuestion,
            QuestionToRelQ => RelQToQuestion,
            RelQToRelA => RelAToRelQ,
            ArticleToComment => CommentToArticle,
        }
    }
}

impl fmt::Display for EdgeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Node index inside one graph.
pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq)]
pub struct GraphNode {
    pub id: NodeId,
    pub ntype: NodeType,
    pub text: String,
    /// BM25 retrieval score; present iff directly retrieved (Article,
    /// RelatedQuestion).
    pub score: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GraphEdge {
    pub src: NodeId,
    pub etype: EdgeType,
    pub dst: NodeId,
}

/// Immutable heterogeneous graph over one sample's MIS bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct HeteroGraph {
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
    pub question: NodeId,
    has_reverses: bool,
}

/// Which MIS types to drop before construction (the removal ablations).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MisDrops {
    /// Drops articles and, with them, their comments.
    pub articles: bool,
    /// Drops comments only.
    pub comments: bool,
    /// Drops related QA pairs (questions and answers together).
    pub related_qa: bool,
}

/// Graph construction options: drops and per-type caps apply before any node
/// is created; reverse edges are added last.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphConfig {
    pub reverse_edges: bool,
    pub drops: MisDrops,
    pub cap_articles: Option<usize>,
    pub cap_related_qa: Option<usize>,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            reverse_edges: true,
            drops: MisDrops::default(),
            cap_articles: None,
            cap_related_qa: None,
        }
    }
}

impl GraphConfig {
    pub fn forward_only() -> Self {
        GraphConfig {
            reverse_edges: false,
            ..GraphConfig::default()
        }
    }
}

/// Builds the MIS graph for a sample with default options (typed reverses
/// enabled, no drops, no caps).
pub fn build_graph(sample: &TrainingSample) -> HeteroGraph {
    build_graph_with(sample, &GraphConfig::default())
}

pub fn build_graph_with(sample: &TrainingSample, config: &GraphConfig) -> HeteroGraph {
    let mut graph = HeteroGraph {
        nodes: Vec::new(),
        edges: Vec::new(),
        question: 0,
        has_reverses: false,
    };
    let question = graph.push_node(NodeType::Question, sample.question.clone(), None);
    graph.question = question;

    if !config.drops.articles {
        let cap = config.cap_articles.unwrap_or(usize::MAX);
        for article in sample.mis.articles.iter().take(cap) {
            let a = graph.push_node(NodeType::Article, article.text.clone(), Some(article.score));
            graph.push_edge(a, EdgeType::ArticleToQuestion, question);
            if !config.drops.comments {
                for comment in &article.comments {
                    let c = graph.push_node(NodeType::Comment, comment.text.clone(), None);
                    graph.push_edge(c, EdgeType::CommentToArticle, a);
                }
            }
        }
    }
    if !config.drops.related_qa {
        let cap = config.cap_related_qa.unwrap_or(usize::MAX);
        for qa in sample.mis.related_qa.iter().take(cap) {
            let rq = graph.push_node(
                NodeType::RelatedQuestion,
                qa.question.clone(),
                Some(qa.score),
            );
            let ra = graph.push_node(NodeType::RelatedAnswer, qa.answer.clone(), None);
            graph.push_edge(rq, EdgeType::RelQToQuestion, question);
            graph.push_edge(ra, EdgeType::RelAToRelQ, rq);
        }
    }
    if config.reverse_edges {
        graph.add_reverse_edges().expect("fresh graph has no reverses");
    }
    graph
}

impl HeteroGraph {
    fn push_node(&mut self, ntype: NodeType, text: String, score: Option<f64>) -> NodeId {
        debug_assert_eq!(score.is_some(), ntype.has_retrieval_score());
        let id = self.nodes.len();
        self.nodes.push(GraphNode {
            id,
            ntype,
            text,
            score,
        });
        id
    }

    fn push_edge(&mut self, src: NodeId, etype: EdgeType, dst: NodeId) {
        let (st, dt) = etype.signature();
        debug_assert_eq!(self.nodes[src].ntype, st);
        debug_assert_eq!(self.nodes[dst].ntype, dt);
        self.edges.push(GraphEdge { src, etype, dst });
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn has_reverses(&self) -> bool {
        self.has_reverses
    }

    pub fn node_type(&self, id: NodeId) -> Option<NodeType> {
        self.nodes.get(id).map(|n| n.ntype)
    }

    /// All MIS node ids (everything except the question), in id order.
    pub fn mis_nodes(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|n| n.ntype != NodeType::Question)
            .map(|n| n.id)
            .collect()
    }

    /// Node-type census, in [`NodeType::ALL`] order.
    pub fn type_census(&self) -> [usize; 5] {
        let mut census = [0usize; 5];
        for node in &self.nodes {
            let k = NodeType::ALL.iter().position(|t| *t == node.ntype).unwrap();
            census[k] += 1;
        }
        census
    }

    /// In-edges of `target` in insertion order.
    pub fn neighbors(&self, target: NodeId) -> Result<Vec<(NodeId, EdgeType)>, GraphError> {
        if target >= self.nodes.len() {
            return Err(GraphError::UnknownNode(target));
        }
        Ok(self
            .edges
            .iter()
            .filter(|e| e.dst == target)
            .map(|e| (e.src, e.etype))
            .collect())
    }

    /// Adds one typed reverse edge per forward edge. Calling twice is an
    /// error rather than a no-op.
    pub fn add_reverse_edges(&mut self) -> Result<(), GraphError> {
        if self.has_reverses || self.edges.iter().any(|e| e.etype.is_reverse()) {
            return Err(GraphError::ReversesAlreadyPresent);
        }
        let reverses: Vec<GraphEdge> = self
            .edges
            .iter()
            .map(|e| GraphEdge {
                src: e.dst,
                etype: e.etype.reverse(),
                dst: e.src,
            })
            .collect();
        self.edges.extend(reverses);
        self.has_reverses = true;
        Ok(())
    }

    /// Line-oriented debug dump: one node per line, then one edge per line,
    /// in stable id/insertion order.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for n in &self.nodes {
            let score = n
                .score
                .map(|s| format!("{s}"))
                .unwrap_or_else(|| "-".to_string());
            out.push_str(&format!("node {} {} {}\n", n.id, n.ntype, score));
        }
        for e in &self.edges {
            out.push_str(&format!("edge {} {} {}\n", e.src, e.etype, e.dst));
        }
        out
    }
}
