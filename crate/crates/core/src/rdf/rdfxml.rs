//! RDF/XML profile: a flat list of `rdf:Description` elements, each holding
//! property elements with either `rdf:resource` or text content.

use std::collections::BTreeMap;

use super::mapping::{ordered_subjects, Index};
use super::{standard_namespace, vocab, Graph, Iri, NamespaceTable, Object, RdfError, Triple, RDF_NS};

fn xml_escape(text: &str, attr: bool) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' if attr => out.push_str("&quot;"),
            '\n' if attr => out.push_str("&#10;"),
            c => out.push(c),
        }
    }
    out
}

/// Namespace bindings for the writer plus an element name for each predicate.
fn qnames(graph: &Graph) -> (NamespaceTable, BTreeMap<String, String>) {
    let mut table = NamespaceTable::new();
    for (prefix, ns) in graph.namespaces.iter() {
        table.bind(prefix, ns);
    }
    table.bind("rdf", RDF_NS);
    let mut names = BTreeMap::new();
    let mut generated = 0;
    for t in &graph.triples {
        let abs = graph.resolve(&t.predicate).unwrap_or_else(|| t.predicate.to_string());
        if names.contains_key(&abs) {
            continue;
        }
        let contracted = table
            .contract(&abs)
            .or_else(|| NamespaceTable::standard().contract(&abs));
        let qname = match contracted {
            Some(Iri::Prefixed { prefix, local }) if is_xml_name(&local) => {
                if table.namespace(&prefix).is_none() {
                    table.bind(prefix.clone(), standard_namespace(&prefix).unwrap_or_default());
                }
                format!("{prefix}:{local}")
            }
            _ => {
                let split = abs.rfind(['#', '/']).map_or(0, |i| i + 1);
                let (ns, local) = abs.split_at(split);
                generated += 1;
                let prefix = format!("ns{generated}");
                table.bind(prefix.clone(), ns);
                format!("{prefix}:{local}")
            }
        };
        names.insert(abs, qname);
    }
    (table, names)
}

fn is_xml_name(local: &str) -> bool {
    local.chars().next().is_some_and(|c| c.is_alphabetic() || c == '_')
        && local
            .chars()
            .all(|c| c.is_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

/// Writes `rdf:Description` blocks with absolute IRIs in `rdf:about` and
/// `rdf:resource`, one commented block per subject.
pub fn write_rdfxml(graph: &Graph) -> String {
    let (table, names) = qnames(graph);
    let index = Index::new(graph);
    let resolve = |iri: &Iri| graph.resolve(iri).unwrap_or_else(|| iri.to_string());

    let mut out = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<rdf:RDF");
    for (i, (prefix, ns)) in table.iter().enumerate() {
        let sep = if i == 0 { " " } else { "\n         " };
        out.push_str(&format!("{sep}xmlns:{prefix}=\"{}\"", xml_escape(ns, true)));
    }
    out.push_str(">\n");

    let mut by_subject: BTreeMap<&Iri, Vec<&Triple>> = BTreeMap::new();
    for t in &graph.triples {
        by_subject.entry(&t.subject).or_default().push(t);
    }
    for subject in ordered_subjects(graph) {
        let Some(triples) = by_subject.get_mut(subject) else {
            continue;
        };
        triples.sort_by_key(|t| {
            let p = resolve(&t.predicate);
            let rank = vocab::PREDICATE_ORDER
                .iter()
                .position(|v| *v == p)
                .unwrap_or(vocab::PREDICATE_ORDER.len());
            (rank, p, t.object.clone())
        });
        let about = resolve(subject);
        out.push('\n');
        if let Some(label) = index.literal(&about, vocab::RDFS_LABEL) {
            let note = format!("{}: {}", index.local(&about), label.replace('\n', " "));
            out.push_str(&format!("    <!-- {} -->\n", note.replace("--", "- -")));
        }
        out.push_str(&format!(
            "    <rdf:Description rdf:about=\"{}\">\n",
            xml_escape(&about, true)
        ));
        for t in triples.iter() {
            let name = &names[&resolve(&t.predicate)];
            match &t.object {
                Object::Iri(o) => out.push_str(&format!(
                    "        <{name} rdf:resource=\"{}\"/>\n",
                    xml_escape(&resolve(o), true)
                )),
                Object::Literal(text) => {
                    out.push_str(&format!("        <{name}>{}</{name}>\n", xml_escape(text, false)))
                }
            }
        }
        out.push_str("    </rdf:Description>\n");
    }
    out.push_str("</rdf:RDF>\n");
    out
}

fn syntax(doc: Option<&roxmltree::Document>, pos: usize, message: impl Into<String>) -> RdfError {
    let (line, column) = doc
        .map(|d| {
            let p = d.text_pos_at(pos);
            (p.row as usize, p.col as usize)
        })
        .unwrap_or((1, 1));
    RdfError::Syntax {
        line,
        column,
        message: message.into(),
    }
}

/// Reads the RDF/XML profile. Attribute values written as `prefix:local`
/// with a known prefix are taken as prefixed names rather than IRIs.
pub fn read_rdfxml(text: &str) -> Result<Graph, RdfError> {
    let doc = roxmltree::Document::parse(text).map_err(|e| {
        let p = e.pos();
        RdfError::Syntax {
            line: p.row as usize,
            column: p.col as usize,
            message: e.to_string(),
        }
    })?;
    let root = doc.root_element();
    if root.tag_name().namespace() != Some(RDF_NS) || root.tag_name().name() != "RDF" {
        return Err(syntax(Some(&doc), root.range().start, "root element must be rdf:RDF"));
    }

    let mut namespaces = NamespaceTable::new();
    for ns in root.namespaces() {
        if let Some(prefix) = ns.name() {
            namespaces.bind(prefix, ns.uri());
        }
    }
    let mut graph = Graph::new(namespaces);

    let value_iri = |graph: &mut Graph, value: &str| -> Iri {
        if let Some((prefix, local)) = value.split_once(':') {
            if !local.starts_with("//") && !prefix.is_empty() {
                if graph.namespaces.namespace(prefix).is_some() {
                    return Iri::prefixed(prefix, local);
                }
                if let Some(ns) = standard_namespace(prefix) {
                    graph.namespaces.bind(prefix, ns);
                    return Iri::prefixed(prefix, local);
                }
            }
        }
        Iri::full(value)
    };

    for desc in root.children().filter(|n| n.is_element()) {
        let tag = desc.tag_name();
        if tag.namespace() != Some(RDF_NS) || tag.name() != "Description" {
            return Err(syntax(
                Some(&doc),
                desc.range().start,
                format!("expected rdf:Description, found {}", tag.name()),
            ));
        }
        let about = desc
            .attribute((RDF_NS, "about"))
            .ok_or_else(|| syntax(Some(&doc), desc.range().start, "rdf:Description without rdf:about"))?;
        let subject = value_iri(&mut graph, about);

        for prop in desc.children().filter(|n| n.is_element()) {
            let name = prop.tag_name();
            let ns = name
                .namespace()
                .ok_or_else(|| syntax(Some(&doc), prop.range().start, "property element without namespace"))?;
            let predicate = match root
                .namespaces()
                .find(|n| n.uri() == ns && n.name().is_some())
                .and_then(|n| n.name())
            {
                Some(prefix) => Iri::prefixed(prefix, name.name()),
                None => Iri::full(format!("{ns}{}", name.name())),
            };
            let object = match prop.attribute((RDF_NS, "resource")) {
                Some(resource) => Object::Iri(value_iri(&mut graph, resource)),
                None => {
                    if prop.children().any(|c| c.is_element()) {
                        return Err(syntax(
                            Some(&doc),
                            prop.range().start,
                            "nested node elements are not supported",
                        ));
                    }
                    Object::Literal(prop.text().unwrap_or_default().to_string())
                }
            };
            graph.insert(Triple::new(subject.clone(), predicate, object));
        }
    }
    Ok(graph)
}
