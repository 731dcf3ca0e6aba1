#include "aarchive/registry.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <set>

#include "aarchive/errors.hpp"
#include "aarchive/log.hpp"
#include "aarchive/registry_data.hpp"

namespace aarchive {

using nlohmann::json;

std::optional<int> ClassMap::label_of(const std::string& name) const {
  for (const auto& [label, n] : entries)
    if (n == name) return label;
  return std::nullopt;
}

const std::string& ClassMap::name_of(int label) const {
  const auto it = entries.find(label);
  if (it == entries.end())
    throw DomainError("class map '" + task_name + "' has no label " + std::to_string(label));
  return it->second;
}

std::vector<std::string> ClassMap::names() const {
  std::vector<std::string> out;
  out.reserve(entries.size());
  for (const auto& [label, n] : entries) out.push_back(n);
  return out;
}

const char* to_string(Resolution r) { return r == Resolution::Coarse ? "coarse" : "fine"; }

Resolution resolution_from_string(const std::string& s) {
  if (s == "coarse") return Resolution::Coarse;
  if (s == "fine") return Resolution::Fine;
  throw ConfigError("resolution must be 'coarse' or 'fine', got '" + s + "'");
}

// ---------------------------------------------------------------------------
// AnatomyGraph

bool AnatomyGraph::has_node(const std::string& name) const { return children_.count(name) > 0; }

bool AnatomyGraph::is_leaf(const std::string& name) const {
  const auto it = children_.find(name);
  return it != children_.end() && it->second.empty();
}

bool AnatomyGraph::is_group(const std::string& name) const { return groups_.count(name) > 0; }

const std::vector<std::string>& AnatomyGraph::children(const std::string& name) const {
  const auto it = children_.find(name);
  if (it == children_.end()) throw DomainError("unknown anatomy node '" + name + "'");
  return it->second;
}

const std::string& AnatomyGraph::top_category_of(const std::string& name) const {
  const std::string* cur = &name;
  if (!has_node(*cur)) throw DomainError("unknown anatomy node '" + name + "'");
  while (true) {
    const auto it = parent_.find(*cur);
    if (it == parent_.end()) return *cur;
    cur = &it->second;
  }
}

std::vector<std::string> AnatomyGraph::leaves_under(const std::string& name) const {
  std::vector<std::string> out;
  std::vector<const std::string*> stack{&name};
  while (!stack.empty()) {
    const std::string& node = *stack.back();
    stack.pop_back();
    const auto& kids = children(node);
    if (kids.empty())
      out.push_back(node);
    else
      for (const auto& k : kids) stack.push_back(&k);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<AnatomyGraph::GroupEdge> AnatomyGraph::group_edges() const {
  std::vector<GroupEdge> out;
  for (const auto& [group, members] : groups_)
    for (const auto& m : members) out.push_back({group, m, group});
  return out;
}

std::vector<std::string> AnatomyGraph::group_tags_of(const std::string& name) const {
  std::vector<std::string> out;
  for (const auto& [group, members] : groups_)
    if (std::find(members.begin(), members.end(), name) != members.end()) out.push_back(group);
  return out;
}

std::vector<std::string> AnatomyGraph::expand_selection(const std::string& selector) const {
  std::set<std::string> acc;
  std::set<std::string> visiting;  // guards group-in-group recursion

  auto expand = [&](auto&& self, const std::string& sel) -> void {
    if (visiting.count(sel)) throw DomainError("group cycle through '" + sel + "'");
    const auto git = groups_.find(sel);
    if (git != groups_.end()) {
      visiting.insert(sel);
      for (const auto& m : git->second) self(self, m);
      visiting.erase(sel);
      return;
    }
    if (has_node(sel)) {
      const auto leaves = leaves_under(sel);
      acc.insert(leaves.begin(), leaves.end());
      return;
    }
    // Bilateral stem: "femur" -> femur_left, femur_right.
    const std::string left = sel + "_left", right = sel + "_right";
    if (has_node(left) || has_node(right)) {
      if (has_node(left)) acc.insert(left);
      if (has_node(right)) acc.insert(right);
      return;
    }
    // Leading side qualifier: "left_femur" -> femur_left.
    for (const std::string side : {"left", "right"}) {
      if (sel.rfind(side + "_", 0) == 0) {
        const std::string flipped = sel.substr(side.size() + 1) + "_" + side;
        if (has_node(flipped)) {
          acc.insert(flipped);
          return;
        }
      }
    }
    throw DomainError("cannot resolve anatomy selector '" + sel + "'");
  };
  expand(expand, selector);

  for (const auto& n : acc)
    if (!is_leaf(n)) throw DomainError("selector '" + selector + "' reached non-leaf '" + n + "'");
  return {acc.begin(), acc.end()};
}

std::vector<std::string> AnatomyGraph::nodes() const {
  std::vector<std::string> out;
  out.reserve(children_.size());
  for (const auto& [node, kids] : children_) out.push_back(node);
  return out;
}

void AnatomyGraph::index_roots() {
  roots_.clear();
  for (const auto& [node, kids] : children_)
    if (!parent_.count(node)) roots_.push_back(node);
  std::sort(roots_.begin(), roots_.end());
}

void AnatomyGraph::check_acyclic() const {
  // Colors: 0 unseen, 1 on stack, 2 done.
  std::map<std::string, int> color;
  auto dfs = [&](auto&& self, const std::string& node) -> void {
    int& c = color[node];
    if (c == 1) throw DomainError("anatomy hierarchy contains a cycle through '" + node + "'");
    if (c == 2) return;
    c = 1;
    for (const auto& k : children(node)) self(self, k);
    c = 2;
  };
  for (const auto& [node, kids] : children_) dfs(dfs, node);
}

json AnatomyGraph::to_json() const {
  json nodes = json::array();
  for (const auto& [node, kids] : children_) nodes.push_back(node);

  json edges = json::array();
  for (const auto& [node, kids] : children_)
    for (const auto& k : kids)
      edges.push_back(json{{"from", node}, {"to", k}, {"kind", "hierarchy"}});
  for (const auto& [group, members] : groups_)
    for (const auto& m : members)
      edges.push_back(json{{"from", group}, {"to", m}, {"kind", "group"}, {"tag", group}});

  return json{{"nodes", nodes}, {"edges", edges}};
}

AnatomyGraph AnatomyGraph::from_json(const json& j) {
  AnatomyGraph g;
  for (const auto& n : j.at("nodes")) g.children_.try_emplace(n.get<std::string>());
  for (const auto& e : j.at("edges")) {
    const std::string from = e.at("from").get<std::string>();
    const std::string to = e.at("to").get<std::string>();
    const std::string kind = e.at("kind").get<std::string>();
    if (kind == "hierarchy") {
      if (g.parent_.count(to)) throw FormatError("node '" + to + "' has two hierarchy parents");
      g.children_[from].push_back(to);
      g.children_.try_emplace(to);
      g.parent_[to] = from;
    } else if (kind == "group") {
      if (e.at("tag").get<std::string>() != from)
        throw FormatError("group edge tag must match the group name");
      g.groups_[from].push_back(to);
    } else {
      throw FormatError("unknown edge kind '" + kind + "'");
    }
  }
  g.index_roots();
  g.check_acyclic();
  return g;
}

AnatomyGraph build_anatomy_graph(const json& hierarchy,
                                 const std::map<std::string, std::vector<std::string>>& groups) {
  AnatomyGraph g;

  auto add_node = [&](const std::string& name) { g.children_.try_emplace(name); };
  auto add_edge = [&](const std::string& parent, const std::string& child) {
    if (g.parent_.count(child))
      throw DomainError("node '" + child + "' has two hierarchy parents");
    add_node(parent);
    add_node(child);
    g.children_[parent].push_back(child);
    g.parent_[child] = parent;
  };

  auto walk = [&](auto&& self, const std::string& name, const json& sub) -> void {
    add_node(name);
    if (sub.is_object()) {
      for (const auto& [k, v] : sub.items()) {
        add_edge(name, k);
        self(self, k, v);
      }
    } else if (sub.is_array()) {
      for (const auto& leaf : sub) add_edge(name, leaf.get<std::string>());
    } else if (!sub.is_null()) {
      throw FormatError("hierarchy values must be objects or arrays");
    }
  };
  if (!hierarchy.is_object()) throw FormatError("hierarchy root must be an object");
  for (const auto& [k, v] : hierarchy.items()) walk(walk, k, v);

  g.groups_ = groups;
  for (const auto& [group, members] : groups)
    for (const auto& m : members)
      if (!g.has_node(m) && !groups.count(m))
        throw DomainError("group '" + group + "' member '" + m + "' is not a node or group");

  g.index_roots();
  g.check_acyclic();
  return g;
}

// ---------------------------------------------------------------------------
// Registry

namespace {

std::string canonical_key(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  std::replace(s.begin(), s.end(), ' ', '_');
  std::replace(s.begin(), s.end(), '-', '_');
  return s;
}

std::map<int, std::string> parse_entries(const json& j) {
  std::map<int, std::string> out;
  for (const auto& [k, v] : j.items()) {
    const int label = std::stoi(k);
    if (label <= 0) throw FormatError("class-map labels must be positive, got " + k);
    out[label] = v.get<std::string>();
  }
  return out;
}

}  // namespace

Registry::Registry(const json& class_maps, const json& settings, const json& hierarchy,
                   const json& groups, const json& synonyms)
    : settings_(settings) {
  for (const auto& file : class_maps) {
    ClassMap m;
    m.task_name = file.at("task").get<std::string>();
    const int version = file.at("version").get<int>();
    m.entries = parse_entries(file.at("entries"));
    if (file.contains("auxiliary")) m.auxiliary = parse_entries(file.at("auxiliary"));

    std::set<std::string> seen;
    for (const auto& [label, name] : m.entries)
      if (!seen.insert(name).second)
        throw FormatError("duplicate name '" + name + "' in class map " + m.task_name);
    for (const auto& [label, name] : m.auxiliary) {
      if (!seen.insert(name).second)
        throw FormatError("duplicate name '" + name + "' in class map " + m.task_name);
      if (m.entries.count(label))
        throw FormatError("auxiliary label collides in class map " + m.task_name);
    }
    class_maps_[m.task_name + "_v" + std::to_string(version)] = std::move(m);
  }

  for (const auto& [alias, canon] : synonyms.items())
    synonyms_[canonical_key(alias)] = canon.get<std::string>();

  std::map<std::string, std::vector<std::string>> group_map;
  for (const auto& [g, members] : groups.items())
    group_map[g] = members.get<std::vector<std::string>>();
  graph_ = build_anatomy_graph(hierarchy, group_map);

  // Case-fold index so lookups can recover canonical spellings such as
  // "vertebrae_L1".
  auto index_name = [this](const std::string& name) {
    const auto [it, fresh] = canonical_spelling_.emplace(canonical_key(name), name);
    if (!fresh && it->second != name)
      throw DomainError("anatomy names '" + it->second + "' and '" + name +
                        "' differ only in case");
  };
  for (const auto& node : graph_.nodes()) index_name(node);
  for (const auto& [group, members] : graph_.groups()) index_name(group);

  // Every archivable mask name must be a hierarchy leaf.
  for (const auto& [key, m] : class_maps_)
    for (const auto& [label, name] : m.entries) {
      if (!graph_.has_node(name))
        throw DomainError("class-map name '" + name + "' missing from the anatomy graph");
      if (!graph_.is_leaf(name))
        throw DomainError("class-map name '" + name + "' is not a leaf in the anatomy graph");
    }
  for (const auto& [alias, canon] : synonyms_) {
    bool known = false;
    normalize_anatomy_name(canon, known);
    if (!known) throw DomainError("synonym target '" + canon + "' is unknown");
  }
}

const Registry& Registry::builtin() {
  static const Registry instance = [] {
    json maps = json::array();
    for (const char* text : data::kClassMapFiles) maps.push_back(json::parse(text));
    return Registry(maps, json::parse(data::kSegmentationSettings),
                    json::parse(data::kAnatomyHierarchy), json::parse(data::kAnatomyGroups),
                    json::parse(data::kSynonyms));
  }();
  return instance;
}

SegConfig Registry::get_seg_config_by_task_name(const std::string& task, Resolution resolution,
                                                int version) const {
  if (version != 1 && version != 2)
    throw ConfigError("unsupported segmentation model version " + std::to_string(version));
  const auto tit = settings_.find(task);
  if (tit == settings_.end()) throw ConfigError("unknown segmentation task '" + task + "'");
  const auto rit = tit->find(to_string(resolution));
  if (rit == tit->end())
    throw ConfigError("task '" + task + "' has no " + to_string(resolution) +
                      " resolution model");

  const json& entry = *rit;
  const std::string vs = "_v" + std::to_string(version);

  auto versioned = [&](const std::string& key) -> const json* {
    if (entry.contains(key + vs)) return &entry.at(key + vs);
    if (entry.contains(key)) return &entry.at(key);
    return nullptr;
  };

  SegConfig cfg;
  cfg.resolution = resolution;

  const json* ids = versioned("task_id");
  if (!ids || ids->is_null())
    throw ConfigError("task '" + task + "' is not available for version " +
                      std::to_string(version));
  if (ids->is_array())
    cfg.task_ids = ids->get<std::vector<int>>();
  else
    cfg.task_ids = {ids->get<int>()};

  const json* name = versioned("task_name");
  cfg.task_name = name ? name->get<std::string>() : task;

  const json* trainer = versioned("trainer");
  std::string t = trainer ? trainer->get<std::string>() : "default";
  if (t == "default") t = version == 1 ? "nnUNetTrainerV2" : "nnUNetTrainer";
  cfg.trainer = t;

  cfg.voxel_size = entry.at("voxel_size").get<double>();
  if (cfg.voxel_size != 1.5 && cfg.voxel_size != 3.0)
    throw ConfigError("voxel size " + std::to_string(cfg.voxel_size) + " is unsupported");

  const json* crop = versioned("crop");
  if (crop && !crop->is_null()) cfg.crop = crop->get<std::string>();
  return cfg;
}

ClassMap Registry::load_class_map(const std::string& task, int version,
                                  bool append_auxiliary) const {
  if (version != 1 && version != 2)
    throw ConfigError("unsupported segmentation model version " + std::to_string(version));
  std::string resolved = task;
  if (version == 1 && (task == "appendicular_bones" || task == "tissue_types"))
    resolved = "bone_tissue_test";

  const auto it = class_maps_.find(resolved + "_v" + std::to_string(version));
  if (it == class_maps_.end())
    throw ConfigError("no class map for task '" + task + "' version " + std::to_string(version));

  ClassMap out = it->second;
  if (append_auxiliary)
    out.entries.insert(out.auxiliary.begin(), out.auxiliary.end());
  else
    out.auxiliary.clear();
  return out;
}

std::string Registry::normalize_anatomy_name(const std::string& name) const {
  bool known = false;
  std::string out = normalize_anatomy_name(name, known);
  if (!known) log::warn("anatomy name '", name, "' is not in the registry; passing it through");
  return out;
}

std::string Registry::normalize_anatomy_name(const std::string& name, bool& known) const {
  std::string key = canonical_key(name);

  // Synonyms may apply to a side-qualified alias ("pelvic_left") as well.
  auto resolve = [&](const std::string& s) -> std::string {
    const auto it = synonyms_.find(s);
    return it == synonyms_.end() ? s : it->second;
  };
  std::string out = resolve(key);
  if (out == key) {
    for (const std::string side : {"_left", "_right"}) {
      if (key.size() > side.size() && key.compare(key.size() - side.size(), side.size(), side) == 0) {
        const std::string stem = resolve(key.substr(0, key.size() - side.size()));
        if (stem != key.substr(0, key.size() - side.size())) {
          out = stem + side;
          break;
        }
      }
    }
  }

  // Restore the canonical spelling of case-folded names.
  const auto spelled = canonical_spelling_.find(canonical_key(out));
  if (spelled != canonical_spelling_.end()) out = spelled->second;

  known = graph_.has_node(out) || graph_.is_group(out) || graph_.has_node(out + "_left") ||
          graph_.has_node(out + "_right");
  return out;
}

std::vector<std::string> Registry::expand_selection(const std::string& selector) const {
  return graph_.expand_selection(normalize_anatomy_name(selector));
}

std::vector<std::string> Registry::muscle_names(const ClassMap& map) const {
  static const std::array<std::string, 4> kKeywords{"iliopsoas", "erector", "gluteus", "muscle"};

  // Reverse synonym lookup: canonical stem -> aliases.
  auto aliases_of = [&](const std::string& stem) {
    std::vector<std::string> out;
    for (const auto& [alias, canon] : synonyms_)
      if (canon == stem) out.push_back(alias);
    return out;
  };

  std::vector<std::string> out;
  for (const auto& [label, name] : map.entries) {
    std::string stem = name;
    for (const std::string side : {"_left", "_right"})
      if (stem.size() > side.size() &&
          stem.compare(stem.size() - side.size(), side.size(), side) == 0)
        stem = stem.substr(0, stem.size() - side.size());

    std::vector<std::string> candidates = aliases_of(stem);
    candidates.push_back(name);
    bool is_muscle = false;
    for (const auto& c : candidates)
      for (const auto& kw : kKeywords)
        if (c.find(kw) != std::string::npos) is_muscle = true;
    if (is_muscle) out.push_back(name);
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace aarchive
