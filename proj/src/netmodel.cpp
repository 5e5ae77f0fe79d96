#include "qkdnet/netmodel.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "qkdnet/error.hpp"

namespace qkdnet::netmodel {

double FibreSpan::loss_db() const {
  return declared_loss_db.value_or(kDefaultFibreLossDbPerKm * length_km);
}

double OpticalElement::insertion_loss_db() const {
  return declared_insertion_loss_db.value_or(
      kind == ElementKind::optical_switch ? kDefaultSwitchInsertionLossDb : 0.0);
}

double QkdModule::abort_threshold() const {
  if (rate.abort_qber) return *rate.abort_qber;
  return family == Family::DV ? 0.11 : 0.25;
}

std::string_view to_string(ElementKind kind) {
  switch (kind) {
    case ElementKind::fixed_mux: return "fixed_mux";
    case ElementKind::bidi_mux: return "bidi_mux";
    case ElementKind::optical_switch: return "switch";
  }
  return "?";
}

std::string_view to_string(Family family) { return family == Family::DV ? "DV" : "CV"; }

std::string_view to_string(Role role) {
  switch (role) {
    case Role::transmitter: return "transmitter";
    case Role::receiver: return "receiver";
    case Role::transceiver: return "transceiver";
  }
  return "?";
}

std::string_view to_string(KeyMode mode) { return mode == KeyMode::distilled ? "distilled" : "raw"; }

namespace {

template <typename T>
const T* find_by_id(const std::vector<T>& items, std::string_view id) {
  auto it = std::ranges::find_if(items, [&](const T& x) { return x.id == id; });
  return it == items.end() ? nullptr : &*it;
}

template <typename T>
const T& require(const T* p, std::string_view what, std::string_view id) {
  if (p == nullptr) {
    throw Error(Errc::unknown_entity, fmt::format("unknown {} '{}'", what, id));
  }
  return *p;
}

}  // namespace

const Node* NetworkModel::find_node(std::string_view id) const { return find_by_id(nodes, id); }
const FibreSpan* NetworkModel::find_span(std::string_view id) const { return find_by_id(spans, id); }
const OpticalElement* NetworkModel::find_element(std::string_view id) const {
  return find_by_id(elements, id);
}
const QkdModule* NetworkModel::find_module(std::string_view id) const { return find_by_id(modules, id); }
const QkdLink* NetworkModel::find_link(std::string_view id) const { return find_by_id(links, id); }
const Application* NetworkModel::find_app(std::string_view id) const { return find_by_id(apps, id); }

const Node& NetworkModel::node(std::string_view id) const { return require(find_node(id), "node", id); }
const FibreSpan& NetworkModel::span(std::string_view id) const { return require(find_span(id), "span", id); }
const QkdModule& NetworkModel::module(std::string_view id) const {
  return require(find_module(id), "module", id);
}
const QkdLink& NetworkModel::link(std::string_view id) const { return require(find_link(id), "link", id); }
const Application& NetworkModel::app(std::string_view id) const {
  return require(find_app(id), "application", id);
}

std::pair<std::string, std::string> NetworkModel::link_nodes(std::string_view link_id) const {
  const auto& l = link(link_id);
  return {module(l.src_module).node, module(l.dst_module).node};
}

// ---------------------------------------------------------------------------
// Parsing

namespace {

struct RawField {
  std::string value;
  std::size_t line = 0;
  std::size_t column = 0;
};

struct RawBlock {
  std::string kind;
  std::string id;
  std::size_t line = 0;
  std::size_t column = 0;
  std::vector<std::pair<std::string, RawField>> fields;
  std::vector<RawField> statements;  // workload lines
};

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string> split_ws(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t') ++j;
    if (j > i) out.emplace_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

bool is_identifier(std::string_view s) {
  if (s.empty()) return false;
  return std::ranges::all_of(s, [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
  });
}

const std::unordered_set<std::string_view> kBlockKinds = {"node", "span",    "element", "module",
                                                          "link", "channel", "app"};

std::vector<RawBlock> tokenize(std::string_view doc) {
  std::vector<RawBlock> blocks;
  std::optional<RawBlock> open;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= doc.size()) {
    std::size_t eol = doc.find('\n', pos);
    if (eol == std::string_view::npos) eol = doc.size();
    std::string_view raw = doc.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (auto hash = raw.find('#'); hash != std::string_view::npos) raw = raw.substr(0, hash);
    std::string_view text = trim(raw);
    if (text.empty()) {
      if (eol == doc.size()) break;
      continue;
    }
    const std::size_t col = static_cast<std::size_t>(text.data() - raw.data()) + 1;

    if (!open) {
      auto tokens = split_ws(text);
      if (tokens.size() == 2 && tokens[0] == "workload" && tokens[1] == "{") {
        open = RawBlock{"workload", "", line_no, col, {}, {}};
      } else if (tokens.size() == 3 && tokens[2] == "{") {
        if (!kBlockKinds.contains(tokens[0])) {
          throw ParseError(line_no, col, fmt::format("unknown block kind '{}'", tokens[0]));
        }
        if (!is_identifier(tokens[1])) {
          throw ParseError(line_no, col + tokens[0].size() + 1,
                           fmt::format("invalid identifier '{}'", tokens[1]));
        }
        open = RawBlock{tokens[0], tokens[1], line_no, col, {}, {}};
      } else {
        throw ParseError(line_no, col, "expected '<kind> <id> {' or 'workload {'");
      }
    } else if (text == "}") {
      blocks.push_back(std::move(*open));
      open.reset();
    } else if (open->kind == "workload") {
      open->statements.push_back(RawField{std::string(text), line_no, col});
    } else {
      auto colon = text.find(':');
      if (colon == std::string_view::npos) {
        throw ParseError(line_no, col, "expected 'key: value'");
      }
      std::string key(trim(text.substr(0, colon)));
      if (!is_identifier(key)) {
        throw ParseError(line_no, col, fmt::format("invalid key '{}'", key));
      }
      std::string_view after = text.substr(colon + 1);
      std::string_view value = trim(after);
      std::size_t vcol = col + colon + 1 + static_cast<std::size_t>(value.data() - after.data());
      if (value.empty()) {
        throw ParseError(line_no, vcol, fmt::format("missing value for '{}'", key));
      }
      for (const auto& [k, f] : open->fields) {
        if (k == key) throw ParseError(line_no, col, fmt::format("duplicate key '{}'", key));
      }
      open->fields.emplace_back(key, RawField{std::string(value), line_no, vcol});
    }
    if (eol == doc.size()) break;
  }
  if (open) {
    throw ParseError(open->line, open->column,
                     fmt::format("unterminated block '{} {}'", open->kind, open->id));
  }
  return blocks;
}

class FieldReader {
 public:
  explicit FieldReader(const RawBlock& block) : block_(block) {}

  const RawField* get(std::string_view key) {
    for (const auto& [k, f] : block_.fields) {
      if (k == key) {
        used_.insert(k);
        return &f;
      }
    }
    return nullptr;
  }

  const RawField& required(std::string_view key) {
    const RawField* f = get(key);
    if (f == nullptr) {
      throw ParseError(block_.line, block_.column,
                       fmt::format("{} '{}' is missing required field '{}'", block_.kind, block_.id, key));
    }
    return *f;
  }

  std::string text(std::string_view key, std::string fallback = {}) {
    const RawField* f = get(key);
    return f ? f->value : std::move(fallback);
  }

  std::string required_text(std::string_view key) { return required(key).value; }

  static double to_double(const RawField& f) {
    double v = 0.0;
    const char* first = f.value.data();
    const char* last = first + f.value.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last) {
      throw ParseError(f.line, f.column, fmt::format("expected a number, got '{}'", f.value));
    }
    return v;
  }

  static int to_int(const RawField& f, std::string_view text) {
    int v = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size()) {
      throw ParseError(f.line, f.column, fmt::format("expected an integer, got '{}'", text));
    }
    return v;
  }

  std::optional<double> number(std::string_view key) {
    const RawField* f = get(key);
    if (!f) return std::nullopt;
    return to_double(*f);
  }

  double required_number(std::string_view key) { return to_double(required(key)); }

  std::optional<bool> boolean(std::string_view key) {
    const RawField* f = get(key);
    if (!f) return std::nullopt;
    if (f->value == "true") return true;
    if (f->value == "false") return false;
    throw ParseError(f->line, f->column, fmt::format("expected true/false, got '{}'", f->value));
  }

  std::vector<std::string> list(std::string_view key) {
    std::vector<std::string> out;
    const RawField* f = get(key);
    if (!f) return out;
    std::string_view rest = f->value;
    while (true) {
      auto comma = rest.find(',');
      auto item = trim(rest.substr(0, comma));
      if (item.empty()) throw ParseError(f->line, f->column, "empty list item");
      out.emplace_back(item);
      if (comma == std::string_view::npos) break;
      rest = rest.substr(comma + 1);
    }
    return out;
  }

  template <typename Enum>
  Enum choice(std::string_view key, std::initializer_list<std::pair<std::string_view, Enum>> options,
              std::optional<Enum> fallback = std::nullopt) {
    const RawField* f = fallback ? get(key) : &required(key);
    if (!f) return *fallback;
    for (const auto& [name, value] : options) {
      if (f->value == name) return value;
    }
    throw ParseError(f->line, f->column, fmt::format("invalid value '{}' for '{}'", f->value, key));
  }

  void finish() const {
    for (const auto& [k, f] : block_.fields) {
      if (!used_.contains(k)) {
        throw ParseError(f.line, f.column - k.size() - 2,
                         fmt::format("unknown field '{}' in {} block", k, block_.kind));
      }
    }
  }

 private:
  const RawBlock& block_;
  std::set<std::string, std::less<>> used_;
};

PortRef parse_port(const RawField& f, std::string_view item) {
  auto colon = item.find(':');
  if (colon == std::string_view::npos) {
    throw ParseError(f.line, f.column, fmt::format("port '{}' must be kind:id", item));
  }
  auto kind = item.substr(0, colon);
  PortRef p;
  p.id = std::string(item.substr(colon + 1));
  if (kind == "span") {
    p.kind = PortRef::Kind::span;
  } else if (kind == "element") {
    p.kind = PortRef::Kind::element;
  } else if (kind == "module") {
    p.kind = PortRef::Kind::module;
  } else {
    throw ParseError(f.line, f.column, fmt::format("unknown port kind '{}'", kind));
  }
  return p;
}

WorkloadCommand parse_workload(const RawField& stmt) {
  auto tokens = split_ws(stmt.value);
  if (tokens.size() < 3 || tokens[0] != "at") {
    throw ParseError(stmt.line, stmt.column, "workload lines read 'at <time>s <verb> ...'");
  }
  WorkloadCommand cmd;
  cmd.line = stmt.line;
  std::string_view t = tokens[1];
  if (t.ends_with('s')) t.remove_suffix(1);
  RawField tf{std::string(t), stmt.line, stmt.column + 3};
  cmd.at_s = FieldReader::to_double(tf);
  if (cmd.at_s < 0) throw ParseError(stmt.line, stmt.column + 3, "workload time must be >= 0");
  cmd.verb = tokens[2];
  for (std::size_t i = 3; i < tokens.size(); ++i) {
    auto eq = tokens[i].find('=');
    if (eq == std::string::npos) {
      cmd.args.push_back(tokens[i]);
    } else {
      cmd.options[tokens[i].substr(0, eq)] = tokens[i].substr(eq + 1);
    }
  }
  return cmd;
}

void build_entity(NetworkModel& m, const RawBlock& b) {
  FieldReader r(b);
  if (b.kind == "node") {
    Node n;
    n.id = b.id;
    n.label = r.text("label", b.id);
    n.domain = r.required_text("domain");
    n.trusted = r.boolean("trusted").value_or(true);
    n.lkms = r.boolean("lkms").value_or(true);
    m.nodes.push_back(std::move(n));
  } else if (b.kind == "span") {
    FibreSpan s;
    s.id = b.id;
    s.label = r.text("label", b.id);
    const RawField& ends = r.required("endpoints");
    auto eps = r.list("endpoints");
    if (eps.size() != 2) throw ParseError(ends.line, ends.column, "a span has exactly two endpoints");
    s.a = eps[0];
    s.b = eps[1];
    s.length_km = r.required_number("length_km");
    s.declared_loss_db = r.number("loss_db");
    s.strands = r.choice<Strands>("strands", {{"duplex_pair", Strands::duplex_pair},
                                              {"single_bidi", Strands::single_bidi}},
                                  Strands::duplex_pair);
    s.domains = r.list("domains");
    m.spans.push_back(std::move(s));
  } else if (b.kind == "element") {
    OpticalElement e;
    e.id = b.id;
    e.node = r.required_text("node");
    e.kind = r.choice<ElementKind>("kind", {{"fixed_mux", ElementKind::fixed_mux},
                                            {"bidi_mux", ElementKind::bidi_mux},
                                            {"switch", ElementKind::optical_switch}});
    if (const RawField* f = r.get("passband")) {
      for (const auto& item : r.list("passband")) e.passband.insert(FieldReader::to_int(*f, item));
    }
    e.declared_insertion_loss_db = r.number("insertion_loss_db");
    e.amplified = r.boolean("amplified").value_or(false);
    if (const RawField* f = r.get("ports")) {
      for (const auto& item : r.list("ports")) e.ports.push_back(parse_port(*f, item));
    }
    m.elements.push_back(std::move(e));
  } else if (b.kind == "module") {
    QkdModule q;
    q.id = b.id;
    q.node = r.required_text("node");
    q.vendor = r.required_text("vendor");
    q.family = r.choice<Family>("family", {{"DV", Family::DV}, {"CV", Family::CV}});
    q.role = r.choice<Role>("role", {{"transmitter", Role::transmitter},
                                     {"receiver", Role::receiver},
                                     {"transceiver", Role::transceiver}});
    q.tunable = r.boolean("tunable").value_or(false);
    if (const RawField* f = r.get("fixed_channel")) q.fixed_channel = FieldReader::to_int(*f, f->value);
    q.domain = r.text("domain");
    q.rate.r0_bps = r.required_number("r0_bps");
    q.rate.max_loss_db = r.required_number("max_loss_db");
    q.rate.qber0 = r.required_number("qber0");
    q.rate.noise_coeff = r.number("noise_coeff").value_or(0.0);
    q.rate.abort_qber = r.number("abort_qber");
    q.raw_capable = r.boolean("raw_capable");
    m.modules.push_back(std::move(q));
  } else if (b.kind == "link") {
    QkdLink l;
    l.id = b.id;
    const RawField& mf = r.required("modules");
    auto mods = r.list("modules");
    if (mods.size() != 2) throw ParseError(mf.line, mf.column, "a link names exactly two modules");
    l.src_module = mods[0];
    l.dst_module = mods[1];
    l.domain = r.text("domain");
    l.switched = r.boolean("switched").value_or(false);
    l.mode = r.choice<KeyMode>("mode", {{"distilled", KeyMode::distilled}, {"raw", KeyMode::raw}},
                               KeyMode::distilled);
    m.links.push_back(std::move(l));
  } else if (b.kind == "channel") {
    Channel c;
    c.id = b.id;
    c.span = r.required_text("span");
    c.kind = r.choice<ChannelKind>("kind", {{"classical", ChannelKind::classical},
                                            {"quantum", ChannelKind::quantum}});
    c.role = r.text("role", "data");
    c.power = r.choice<PowerClass>("power", {{"low", PowerClass::low}, {"high", PowerClass::high}},
                                   PowerClass::low);
    c.encrypted = r.boolean("encrypted").value_or(false);
    if (const RawField* f = r.get("link")) c.link = f->value;
    m.channels.push_back(std::move(c));
  } else if (b.kind == "app") {
    Application a;
    a.id = b.id;
    a.node = r.required_text("node");
    a.kind = r.text("kind", "sae");
    a.domain = r.text("domain");
    m.apps.push_back(std::move(a));
  }
  r.finish();
}

[[noreturn]] void dangling(std::string_view owner_kind, std::string_view owner, std::string_view field,
                           std::string_view target_kind, std::string_view id) {
  throw Error(Errc::dangling_reference,
              fmt::format("{} '{}' field '{}' references unknown {} '{}'", owner_kind, owner, field,
                          target_kind, id));
}

[[noreturn]] void violation(std::string_view type, std::string_view field, std::string_view id,
                            std::string_view detail) {
  throw Error(Errc::invariant_violation, fmt::format("{}.{} ({}): {}", type, field, id, detail));
}

template <typename T>
void check_unique(const std::vector<T>& items, std::string_view type) {
  std::unordered_set<std::string> seen;
  for (const auto& x : items) {
    if (!seen.insert(x.id).second) violation(type, "id", x.id, "duplicate id");
  }
}

}  // namespace

void validate(NetworkModel& m) {
  check_unique(m.nodes, "Node");
  check_unique(m.spans, "FibreSpan");
  check_unique(m.elements, "OpticalElement");
  check_unique(m.modules, "QkdModule");
  check_unique(m.links, "QkdLink");
  check_unique(m.channels, "Channel");
  check_unique(m.apps, "Application");

  for (auto& n : m.nodes) {
    n.hosted_modules.clear();
    n.hosted_apps.clear();
  }
  auto node_mut = [&](std::string_view id) -> Node* {
    auto it = std::ranges::find_if(m.nodes, [&](const Node& n) { return n.id == id; });
    return it == m.nodes.end() ? nullptr : &*it;
  };

  for (const auto& s : m.spans) {
    if (!m.find_node(s.a)) dangling("span", s.id, "endpoints", "node", s.a);
    if (!m.find_node(s.b)) dangling("span", s.id, "endpoints", "node", s.b);
    if (s.a == s.b) violation("FibreSpan", "endpoints", s.id, "endpoints must differ");
    if (s.length_km < 0) violation("FibreSpan", "length_km", s.id, "must be >= 0");
    if (s.declared_loss_db && *s.declared_loss_db < 0) violation("FibreSpan", "loss_db", s.id, "must be >= 0");
  }

  for (const auto& q : m.modules) {
    Node* host = node_mut(q.node);
    if (!host) dangling("module", q.id, "node", "node", q.node);
    host->hosted_modules.push_back(q.id);
    if (!q.tunable && !q.fixed_channel) {
      violation("QkdModule", "fixed_channel", q.id, "required when tunable = false");
    }
    if (!(q.rate.r0_bps > 0)) violation("QkdModule", "r0_bps", q.id, "must be > 0");
    if (!(q.rate.qber0 >= 0 && q.rate.qber0 < 0.5)) violation("QkdModule", "qber0", q.id, "must be in [0, 0.5)");
    if (q.rate.max_loss_db < 0) violation("QkdModule", "max_loss_db", q.id, "must be >= 0");
    if (q.rate.noise_coeff < 0) violation("QkdModule", "noise_coeff", q.id, "must be >= 0");
  }

  for (const auto& e : m.elements) {
    const Node* host = m.find_node(e.node);
    if (!host) dangling("element", e.id, "node", "node", e.node);
    if (e.filters() && e.passband.empty()) violation("OpticalElement", "passband", e.id, "must be non-empty");
    if (e.insertion_loss_db() < 0) violation("OpticalElement", "insertion_loss_db", e.id, "must be >= 0");
    for (const auto& p : e.ports) {
      switch (p.kind) {
        case PortRef::Kind::span: {
          const FibreSpan* s = m.find_span(p.id);
          if (!s) dangling("element", e.id, "ports", "span", p.id);
          if (!s->touches(e.node)) violation("OpticalElement", "ports", e.id, fmt::format("span '{}' does not reach node '{}'", p.id, e.node));
          break;
        }
        case PortRef::Kind::element: {
          const OpticalElement* o = m.find_element(p.id);
          if (!o) dangling("element", e.id, "ports", "element", p.id);
          if (o->node != e.node) violation("OpticalElement", "ports", e.id, fmt::format("element '{}' is at another node", p.id));
          if (o->id == e.id) violation("OpticalElement", "ports", e.id, "element cannot connect to itself");
          break;
        }
        case PortRef::Kind::module: {
          const QkdModule* q = m.find_module(p.id);
          if (!q) dangling("element", e.id, "ports", "module", p.id);
          if (q->node != e.node) violation("OpticalElement", "ports", e.id, fmt::format("module '{}' is at another node", p.id));
          break;
        }
      }
    }
  }

  // Each connected group of elements at a node must reach at least one span.
  {
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < m.elements.size(); ++i) index[m.elements[i].id] = i;
    std::vector<std::size_t> parent(m.elements.size());
    std::iota(parent.begin(), parent.end(), 0);
    std::function<std::size_t(std::size_t)> root = [&](std::size_t i) {
      while (parent[i] != i) i = parent[i] = parent[parent[i]];
      return i;
    };
    for (std::size_t i = 0; i < m.elements.size(); ++i) {
      for (const auto& p : m.elements[i].ports) {
        if (p.kind == PortRef::Kind::element) parent[root(i)] = root(index.at(p.id));
      }
    }
    std::unordered_set<std::size_t> with_span;
    for (std::size_t i = 0; i < m.elements.size(); ++i) {
      for (const auto& p : m.elements[i].ports) {
        if (p.kind == PortRef::Kind::span) with_span.insert(root(i));
      }
    }
    for (std::size_t i = 0; i < m.elements.size(); ++i) {
      if (!with_span.contains(root(i))) {
        violation("OpticalElement", "ports", m.elements[i].id,
                  fmt::format("element group at node '{}' is not connected to any span", m.elements[i].node));
      }
    }
  }

  for (const auto& l : m.links) {
    const QkdModule* a = m.find_module(l.src_module);
    const QkdModule* b = m.find_module(l.dst_module);
    if (!a) dangling("link", l.id, "modules", "module", l.src_module);
    if (!b) dangling("link", l.id, "modules", "module", l.dst_module);
    if (a->id == b->id) violation("QkdLink", "modules", l.id, "modules must differ");
    if (a->node == b->node) violation("QkdLink", "modules", l.id, "modules must sit at different nodes");
    if (l.mode == KeyMode::raw && !(a->can_deliver_raw() && b->can_deliver_raw())) {
      violation("QkdLink", "mode", l.id, "raw mode requires raw-capable modules");
    }
  }

  for (const auto& c : m.channels) {
    if (!m.find_span(c.span)) dangling("channel", c.id, "span", "span", c.span);
    if (c.link && !m.find_link(*c.link)) dangling("channel", c.id, "link", "link", *c.link);
    if (c.encrypted && c.kind != ChannelKind::classical) {
      violation("Channel", "encrypted", c.id, "only classical channels carry encrypted traffic");
    }
  }

  for (const auto& a : m.apps) {
    Node* host = node_mut(a.node);
    if (!host) dangling("app", a.id, "node", "node", a.node);
    host->hosted_apps.push_back(a.id);
  }

  for (const auto& n : m.nodes) {
    if (n.lkms && !n.trusted && !n.hosted_modules.empty()) {
      violation("Node", "trusted", n.id, "a node hosting an LKMS must be trusted");
    }
  }

  for (const auto& w : m.workload) {
    if (w.verb == "open") {
      if (w.args.size() != 2) {
        throw Error(Errc::invariant_violation, fmt::format("workload line {}: open takes two applications", w.line));
      }
      for (const auto& id : w.args) {
        if (!m.find_app(id)) {
          throw Error(Errc::dangling_reference,
                      fmt::format("workload line {} references unknown application '{}'", w.line, id));
        }
      }
    } else if (w.verb == "close") {
      if (w.args.size() != 1) {
        throw Error(Errc::invariant_violation, fmt::format("workload line {}: close takes one session label", w.line));
      }
    } else if (w.verb == "set_mode") {
      if (w.args.size() != 2 || !m.find_link(w.args[0])) {
        throw Error(Errc::dangling_reference, fmt::format("workload line {}: set_mode <link> <mode>", w.line));
      }
    } else if (w.verb == "set_power") {
      if (w.args.size() != 2 || !m.find_link(w.args[0])) {
        throw Error(Errc::dangling_reference, fmt::format("workload line {}: set_power <link> <index>", w.line));
      }
    } else if (w.verb == "fail") {
      if (w.args.size() != 1 || !m.find_link(w.args[0])) {
        throw Error(Errc::dangling_reference, fmt::format("workload line {}: fail <link>", w.line));
      }
    } else {
      throw Error(Errc::invariant_violation, fmt::format("workload line {}: unknown verb '{}'", w.line, w.verb));
    }
  }
}

NetworkModel load_scenario(std::string_view document) {
  NetworkModel model;
  bool saw_workload = false;
  for (const auto& block : tokenize(document)) {
    if (block.kind == "workload") {
      if (saw_workload) throw ParseError(block.line, block.column, "only one workload block is allowed");
      saw_workload = true;
      for (const auto& stmt : block.statements) model.workload.push_back(parse_workload(stmt));
    } else {
      build_entity(model, block);
    }
  }
  std::ranges::stable_sort(model.workload, {}, &WorkloadCommand::at_s);
  validate(model);
  return model;
}

NetworkModel load_scenario_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_error, fmt::format("cannot open scenario '{}'", path));
  std::stringstream ss;
  ss << in.rdbuf();
  return load_scenario(ss.str());
}

// ---------------------------------------------------------------------------
// Serialisation

namespace {

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ", ";
    out += items[i];
  }
  return out;
}

std::string port_text(const PortRef& p) {
  switch (p.kind) {
    case PortRef::Kind::span: return "span:" + p.id;
    case PortRef::Kind::element: return "element:" + p.id;
    case PortRef::Kind::module: return "module:" + p.id;
  }
  return {};
}

}  // namespace

std::string serialize(const NetworkModel& m) {
  std::string out;
  auto kv = [&](std::string_view k, const std::string& v) { out += fmt::format("  {}: {}\n", k, v); };
  auto num = [](double v) { return fmt::format("{}", v); };
  auto flag = [](bool v) { return std::string(v ? "true" : "false"); };

  for (const auto& n : m.nodes) {
    out += fmt::format("node {} {{\n", n.id);
    kv("label", n.label);
    kv("domain", n.domain);
    kv("trusted", flag(n.trusted));
    kv("lkms", flag(n.lkms));
    out += "}\n";
  }
  for (const auto& s : m.spans) {
    out += fmt::format("span {} {{\n", s.id);
    kv("label", s.label);
    kv("endpoints", s.a + ", " + s.b);
    kv("length_km", num(s.length_km));
    if (s.declared_loss_db) kv("loss_db", num(*s.declared_loss_db));
    kv("strands", s.strands == Strands::duplex_pair ? "duplex_pair" : "single_bidi");
    if (!s.domains.empty()) kv("domains", join(s.domains));
    out += "}\n";
  }
  for (const auto& e : m.elements) {
    out += fmt::format("element {} {{\n", e.id);
    kv("node", e.node);
    kv("kind", std::string(to_string(e.kind)));
    if (!e.passband.empty()) {
      std::vector<std::string> chans;
      for (int c : e.passband) chans.push_back(std::to_string(c));
      kv("passband", join(chans));
    }
    if (e.declared_insertion_loss_db) kv("insertion_loss_db", num(*e.declared_insertion_loss_db));
    if (e.amplified) kv("amplified", "true");
    if (!e.ports.empty()) {
      std::vector<std::string> ports;
      for (const auto& p : e.ports) ports.push_back(port_text(p));
      kv("ports", join(ports));
    }
    out += "}\n";
  }
  for (const auto& q : m.modules) {
    out += fmt::format("module {} {{\n", q.id);
    kv("node", q.node);
    kv("vendor", q.vendor);
    kv("family", std::string(to_string(q.family)));
    kv("role", std::string(to_string(q.role)));
    kv("tunable", flag(q.tunable));
    if (q.fixed_channel) kv("fixed_channel", std::to_string(*q.fixed_channel));
    if (!q.domain.empty()) kv("domain", q.domain);
    kv("r0_bps", num(q.rate.r0_bps));
    kv("max_loss_db", num(q.rate.max_loss_db));
    kv("qber0", num(q.rate.qber0));
    kv("noise_coeff", num(q.rate.noise_coeff));
    if (q.rate.abort_qber) kv("abort_qber", num(*q.rate.abort_qber));
    if (q.raw_capable) kv("raw_capable", flag(*q.raw_capable));
    out += "}\n";
  }
  for (const auto& l : m.links) {
    out += fmt::format("link {} {{\n", l.id);
    kv("modules", l.src_module + ", " + l.dst_module);
    if (!l.domain.empty()) kv("domain", l.domain);
    kv("switched", flag(l.switched));
    kv("mode", std::string(to_string(l.mode)));
    out += "}\n";
  }
  for (const auto& c : m.channels) {
    out += fmt::format("channel {} {{\n", c.id);
    kv("span", c.span);
    kv("kind", c.kind == ChannelKind::classical ? "classical" : "quantum");
    kv("role", c.role);
    kv("power", c.power == PowerClass::low ? "low" : "high");
    kv("encrypted", flag(c.encrypted));
    if (c.link) kv("link", *c.link);
    out += "}\n";
  }
  for (const auto& a : m.apps) {
    out += fmt::format("app {} {{\n", a.id);
    kv("node", a.node);
    kv("kind", a.kind);
    if (!a.domain.empty()) kv("domain", a.domain);
    out += "}\n";
  }
  if (!m.workload.empty()) {
    out += "workload {\n";
    for (const auto& w : m.workload) {
      out += fmt::format("  at {}s {}", num(w.at_s), w.verb);
      for (const auto& a : w.args) out += " " + a;
      for (const auto& [k, v] : w.options) out += fmt::format(" {}={}", k, v);
      out += "\n";
    }
    out += "}\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reports over the static model

std::string DomainSummary::links_label() const {
  if (switched && qkd_links == 0) return "all-to-all";
  if (border) return fmt::format("{} + border", qkd_links);
  return std::to_string(qkd_links);
}

Summary summarize(const NetworkModel& m) {
  std::vector<std::string> order;
  auto note = [&](const std::string& d) {
    if (!d.empty() && std::ranges::find(order, d) == order.end()) order.push_back(d);
  };
  for (const auto& n : m.nodes) note(n.domain);
  for (const auto& s : m.spans) {
    for (const auto& d : s.domains) note(d);
  }
  for (const auto& q : m.modules) note(q.domain);
  for (const auto& a : m.apps) note(a.domain);

  Summary summary;
  for (const auto& d : order) {
    DomainSummary row;
    row.domain = d;
    std::set<std::string> nodes;
    for (const auto& n : m.nodes) {
      if (n.domain == d) nodes.insert(n.id);
    }
    for (const auto& q : m.modules) {
      if (q.domain == d) {
        nodes.insert(q.node);
        ++row.modules;
      }
    }
    row.nodes = nodes.size();
    for (const auto& l : m.links) {
      const auto& src = m.module(l.src_module);
      const auto& dst = m.module(l.dst_module);
      if (src.domain != dst.domain && (src.domain == d || dst.domain == d)) row.border = true;
      if (l.domain != d) continue;
      if (l.switched) {
        row.switched = true;
      } else {
        ++row.qkd_links;
      }
    }
    for (const auto& s : m.spans) {
      if (std::ranges::find(s.domains, d) != s.domains.end()) row.length_km += s.length_km;
    }
    for (const auto& a : m.apps) {
      if (a.domain == d && a.is_encryptor()) ++row.encryptors;
    }
    summary.domains.push_back(std::move(row));
  }

  summary.total.domain = "TOTAL";
  summary.total.nodes = m.nodes.size();
  summary.total.qkd_links = m.links.size();
  summary.total.modules = m.modules.size();
  for (const auto& s : m.spans) summary.total.length_km += s.length_km;
  summary.total.encryptors = static_cast<std::size_t>(
      std::ranges::count_if(m.apps, [](const Application& a) { return a.is_encryptor(); }));
  return summary;
}

ChannelCensus coexistence_census(const NetworkModel& m, std::string_view span_id) {
  const FibreSpan& span = m.span(span_id);
  ChannelCensus census;
  census.link = span.id;
  for (const auto& c : m.channels) {
    if (c.span != span.id) continue;
    if (c.kind == ChannelKind::quantum) {
      ++census.quantum;
    } else {
      ++census.classical;
      if (c.encrypted) ++census.encrypted;
    }
  }
  return census;
}

double classical_power_index(const NetworkModel& m, const std::vector<std::string>& span_ids) {
  std::set<std::string_view> spans(span_ids.begin(), span_ids.end());
  double index = 0.0;
  for (const auto& c : m.channels) {
    if (c.kind != ChannelKind::classical || !spans.contains(c.span)) continue;
    index += c.power == PowerClass::high ? 3.0 : 1.0;
  }
  return index;
}

}  // namespace qkdnet::netmodel
