//! Test-side oracles. Nothing here calls the library's matching, geometry or
//! routine code; it works straight from scene annotations.

#![allow(dead_code)]

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use vismc::backend::{load_corpus, respond, SceneCorpus, SceneDocument, SceneObject};
use vismc::model::{BBox, NounPhrase, Triplet};
use vismc::pipeline::QueryInput;
use vismc::vm::VmConfig;

pub fn corpus_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../corpus")
}

pub fn corpus() -> SceneCorpus {
    load_corpus(&corpus_dir().join("scenes")).expect("bundled corpus loads")
}

pub fn queries() -> Vec<QueryInput> {
    vismc::io::read_jsonl(&corpus_dir().join("queries.jsonl")).expect("bundled queries load")
}

// ---------------------------------------------------------------------------
// Brute-force scene evaluator

/// What a predicate asks of a scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Geometric(&'static str),
    Reading,
    Attribute,
    Action,
}

const GEOMETRIC: &[(&str, &str)] = &[
    ("to the left of", "left"),
    ("to the right of", "right"),
    ("left of", "left"),
    ("right of", "right"),
    ("in front of", "overlap_or_near"),
    ("next to", "near"),
    ("located by", "near"),
    ("on top of", "on"),
    ("on", "on"),
    ("under", "under"),
    ("beneath", "under"),
    ("above", "above"),
    ("below", "below"),
    ("near", "near"),
    ("by", "near"),
    ("beside", "near"),
    ("in", "inside"),
    ("inside", "inside"),
    ("within", "inside"),
    ("behind", "overlap_or_near"),
    ("with", "overlap_or_near"),
    ("has", "overlap_or_near"),
    ("have", "overlap_or_near"),
    ("holding", "overlap_or_near"),
    ("containing", "overlap_or_near"),
];

const READING: &[&str] = &["reads", "says", "labeled", "displays"];

pub fn sense(t: &Triplet) -> Sense {
    let p = t.predicate.to_lowercase();
    let words: Vec<&str> = p.split_whitespace().collect();
    if t.object.literal.is_some() || words.last().is_some_and(|w| READING.contains(w)) {
        return Sense::Reading;
    }
    if p == "is" || p == "are" || p == "made of" {
        return Sense::Attribute;
    }
    // a verb followed by a spatial preposition takes the preposition's meaning
    for start in 0..words.len() {
        let tail = words[start..].join(" ");
        if let Some((_, rel)) = GEOMETRIC.iter().find(|(name, _)| *name == tail) {
            return Sense::Geometric(rel);
        }
    }
    Sense::Action
}

fn lower_words(s: &str) -> Vec<String> {
    s.split_whitespace().map(|w| w.to_lowercase()).collect()
}

fn np_words(np: &NounPhrase) -> Vec<String> {
    let mut w: Vec<String> = np.attributes.iter().map(|a| a.to_lowercase()).collect();
    w.extend(lower_words(&np.head));
    w
}

/// The phrase names the object: one of its names ends the phrase and every
/// word before that is one of its attributes.
fn describes(words: &[String], o: &SceneObject) -> bool {
    std::iter::once(&o.category).chain(o.synonyms.iter()).any(|name| {
        let name = lower_words(name);
        if name.is_empty() || words.len() < name.len() {
            return false;
        }
        let split = words.len() - name.len();
        words[split..] == name[..] && words[..split].iter().all(|w| o.attributes.iter().any(|a| a.to_lowercase() == *w))
    })
}

fn matching<'a>(scene: &'a SceneDocument, words: &[String]) -> Vec<&'a SceneObject> {
    scene.objects.iter().filter(|o| describes(words, o)).collect()
}

fn enough(found: usize, np: &NounPhrase) -> bool {
    np.count.is_none_or(|c| found >= c as usize)
}

fn fold_verb(w: &str) -> String {
    let w = w.to_lowercase();
    if w.len() > 4 && w.ends_with("ing") {
        w[..w.len() - 3].to_string()
    } else if w.len() > 3 && w.ends_with('s') {
        w[..w.len() - 1].to_string()
    } else {
        w
    }
}

fn same_verb(a: &str, b: &str) -> bool {
    let norm = |s: &str| -> Vec<String> {
        s.split_whitespace()
            .filter(|w| !matches!(w.to_lowercase().as_str(), "is" | "are" | "a" | "an" | "the"))
            .map(fold_verb)
            .collect()
    };
    let (a, b) = (norm(a), norm(b));
    !a.is_empty() && a == b
}

fn squash(s: &str) -> String {
    let lowered: String = s
        .chars()
        .map(|c| if c.is_alphanumeric() { c.to_ascii_lowercase() } else if c.is_whitespace() { ' ' } else { '\u{0}' })
        .filter(|c| *c != '\u{0}')
        .collect();
    lowered.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn span(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

/// Pairwise relation, written from the definitions.
pub fn geometric(rel: &str, a: &BBox, b: &BBox, c: &VmConfig) -> bool {
    let (ax, ay) = ((a.x0 + a.x1) / 2.0, (a.y0 + a.y1) / 2.0);
    let (bx, by) = ((b.x0 + b.x1) / 2.0, (b.y0 + b.y1) / 2.0);
    let (aw, ah, bw, bh) = (a.x1 - a.x0, a.y1 - a.y0, b.x1 - b.x0, b.y1 - b.y0);
    let ox = span(a.x0, a.x1, b.x0, b.x1);
    let oy = span(a.y0, a.y1, b.y0, b.y1);
    let dist = ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt();
    let near = dist <= c.near_frac * 2f64.sqrt();
    match rel {
        "above" => ay < by && oy < 0.5 * ah.min(bh),
        "below" => ay > by && oy < 0.5 * ah.min(bh),
        "left" => ax < bx && ox < 0.5 * aw.min(bw),
        "right" => ax > bx && ox < 0.5 * aw.min(bw),
        "under" => ay > by && oy < 0.5 * ah.min(bh) && ox > 0.0,
        "on" => a.y1 >= b.y0 - c.contact_tol && a.y1 <= by + c.contact_tol && ox / aw.min(bw) >= c.min_overlap,
        "inside" => ox * oy >= c.inside_frac * aw * ah,
        "near" => near,
        "overlap_or_near" => ox * oy > 0.0 || near,
        other => panic!("oracle has no relation {other}"),
    }
}

/// Does `scene` satisfy `t`? Enumerates every candidate witness.
pub fn satisfies(scene: &SceneDocument, t: &Triplet, c: &VmConfig) -> bool {
    let subj = matching(scene, &np_words(&t.subject));
    match sense(t) {
        Sense::Reading => {
            let literal = squash(t.object.literal.as_deref().unwrap_or(&t.object.head));
            let readable = |s: &SceneObject| {
                scene.objects.iter().any(|o| {
                    o.text.as_deref().is_some_and(|text| squash(text).contains(&literal))
                        && span(s.bbox.x0, s.bbox.x1, o.bbox.x0, o.bbox.x1) * span(s.bbox.y0, s.bbox.y1, o.bbox.y0, o.bbox.y1) > 0.0
                })
            };
            !literal.is_empty() && enough(subj.len(), &t.subject) && subj.iter().any(|s| readable(s))
        }
        Sense::Attribute => {
            let mut words = np_words(&t.object);
            words.extend(np_words(&t.subject));
            let found = matching(scene, &words).len();
            found > 0 && enough(found, &t.subject)
        }
        Sense::Geometric(rel) => {
            let obj = matching(scene, &np_words(&t.object));
            enough(subj.len(), &t.subject)
                && enough(obj.len(), &t.object)
                && subj.iter().any(|s| obj.iter().any(|o| geometric(rel, &s.bbox, &o.bbox, c)))
        }
        Sense::Action => {
            if !t.object.is_object() || t.predicate == "depicts" {
                return !subj.is_empty() && enough(subj.len(), &t.subject);
            }
            let sw = np_words(&t.subject);
            let ow = np_words(&t.object);
            let obj = matching(scene, &ow);
            let acted = scene.relations.iter().any(|r| {
                let s = scene.objects.iter().find(|o| o.id == r.subject_id);
                let o = scene.objects.iter().find(|o| o.id == r.object_id);
                matches!((s, o), (Some(s), Some(o)) if describes(&sw, s) && describes(&ow, o) && same_verb(&r.predicate, &t.predicate))
            });
            let counted = t.subject.count.is_some() || t.object.count.is_some();
            acted
                && enough(subj.len(), &t.subject)
                && enough(obj.len(), &t.object)
                && (!counted || subj.iter().any(|s| obj.iter().any(|o| geometric("near", &s.bbox, &o.bbox, c))))
        }
    }
}

/// Scenes satisfying every triplet.
pub fn full_matches(corpus: &SceneCorpus, triplets: &[Triplet], c: &VmConfig) -> BTreeSet<String> {
    corpus
        .scenes()
        .filter(|s| triplets.iter().all(|t| satisfies(s, t, c)))
        .map(|s| s.image_id.clone())
        .collect()
}

// ---------------------------------------------------------------------------
// Fault-injecting detector server

#[derive(Debug, Clone)]
pub enum Fault {
    /// Read the request, then hang up without answering.
    Drop,
    /// Answer correctly after a pause.
    Delay(Duration),
    /// Answer 200 with a body that is not JSON.
    Malformed,
    Pass,
}

pub struct FaultServer {
    addr: std::net::SocketAddr,
    connections: Arc<AtomicUsize>,
    stop: Arc<AtomicBool>,
}

impl FaultServer {
    /// Connection `i` gets `script[i]`; connections past the script pass.
    pub fn start(corpus: SceneCorpus, script: Vec<Fault>) -> FaultServer {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let connections = Arc::new(AtomicUsize::new(0));
        let stop = Arc::new(AtomicBool::new(false));
        let corpus = Arc::new(corpus);
        let (count, halt) = (connections.clone(), stop.clone());
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                if halt.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let i = count.fetch_add(1, Ordering::SeqCst);
                let fault = script.get(i).cloned().unwrap_or(Fault::Pass);
                let corpus = corpus.clone();
                std::thread::spawn(move || serve(stream, fault, &corpus));
            }
        });
        FaultServer { addr, connections, stop }
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn connections(&self) -> usize {
        self.connections.load(Ordering::SeqCst)
    }
}

impl Drop for FaultServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
    }
}

fn read_request(stream: &TcpStream) -> std::io::Result<Vec<u8>> {
    let mut reader = BufReader::new(stream);
    let mut length = 0;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 {
            break;
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                length = v.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body)?;
    Ok(body)
}

fn serve(mut stream: TcpStream, fault: Fault, corpus: &SceneCorpus) {
    let Ok(body) = read_request(&stream) else { return };
    let (status, payload) = match fault {
        Fault::Drop => return,
        Fault::Malformed => (200, "{\"results\": [[{\"x0\": 0.1,".to_string()),
        Fault::Delay(d) => {
            std::thread::sleep(d);
            let (s, r) = respond(&body, corpus);
            (s, r.to_json())
        }
        Fault::Pass => {
            let (s, r) = respond(&body, corpus);
            (s, r.to_json())
        }
    };
    let head = format!(
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        payload.len()
    );
    let _ = stream.write_all(head.as_bytes());
    let _ = stream.write_all(payload.as_bytes());
    let _ = stream.flush();
}
