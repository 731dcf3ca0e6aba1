#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace aarchive {

/// Label-integer to anatomy-name table of one segmentation task.
struct ClassMap {
  std::string task_name;
  std::map<int, std::string> entries;
  std::map<int, std::string> auxiliary;  ///< raw auxiliary entries, also merged when appended

  /// Label of an anatomy name, or nullopt when absent.
  std::optional<int> label_of(const std::string& name) const;
  const std::string& name_of(int label) const;
  bool has_name(const std::string& name) const { return label_of(name).has_value(); }
  std::vector<std::string> names() const;
};

enum class Resolution { Coarse, Fine };

const char* to_string(Resolution r);
Resolution resolution_from_string(const std::string& s);

/// Version-resolved settings for one segmentation task.
struct SegConfig {
  std::string task_name;
  std::vector<int> task_ids;
  std::string trainer;
  double voxel_size = 1.5;
  std::optional<std::string> crop;
  Resolution resolution = Resolution::Fine;
};

/// Directed multi-graph of anatomy names: a hierarchy tree (parent -> child)
/// plus group-membership edges running in parallel, each tagged with the
/// group name. Anatomy masks always attach to hierarchy leaves.
class AnatomyGraph {
public:
  struct GroupEdge {
    std::string from;  ///< group name
    std::string to;    ///< member node (anatomy, structure, or another group)
    std::string tag;   ///< group name again; tags make parallel edges distinct
  };

  bool has_node(const std::string& name) const;
  bool is_leaf(const std::string& name) const;
  bool is_group(const std::string& name) const;
  const std::vector<std::string>& children(const std::string& name) const;
  const std::vector<std::string>& top_categories() const { return roots_; }

  /// Hierarchy root (bone / lung / soft_tissue) a node belongs to.
  const std::string& top_category_of(const std::string& name) const;

  /// All hierarchy leaves at or below a node, sorted.
  std::vector<std::string> leaves_under(const std::string& name) const;

  /// Every hierarchy node name, sorted.
  std::vector<std::string> nodes() const;

  /// Group membership lists as declared (unexpanded).
  const std::map<std::string, std::vector<std::string>>& groups() const { return groups_; }

  /// Every group edge, one per membership.
  std::vector<GroupEdge> group_edges() const;

  /// Group tags attached to a node (directly, not via ancestors).
  std::vector<std::string> group_tags_of(const std::string& name) const;

  /// Resolve a selector (leaf, structure, group, or side-qualified name such
  /// as "femur_left"; a bare bilateral stem like "femur" expands to both
  /// sides) to a sorted list of leaf anatomy names.
  std::vector<std::string> expand_selection(const std::string& selector) const;

  nlohmann::json to_json() const;
  static AnatomyGraph from_json(const nlohmann::json& j);

  friend AnatomyGraph build_anatomy_graph(const nlohmann::json& hierarchy,
                                          const std::map<std::string, std::vector<std::string>>& groups);

private:
  void index_roots();
  void check_acyclic() const;

  std::vector<std::string> roots_;
  std::map<std::string, std::vector<std::string>> children_;  // hierarchy edges
  std::map<std::string, std::string> parent_;
  std::map<std::string, std::vector<std::string>> groups_;
};

/// Build the multi-graph from a nested hierarchy map (JSON object of objects,
/// leaves as [] or list of names) and group membership lists. Member names
/// may be hierarchy nodes or other groups. Throws DomainError on cycles or
/// unresolvable members.
AnatomyGraph build_anatomy_graph(const nlohmann::json& hierarchy,
                                 const std::map<std::string, std::vector<std::string>>& groups);

/// Immutable registry of class maps, segmentation settings, synonyms, and
/// the anatomy graph. Safe to share across threads after construction.
class Registry {
public:
  /// Registry over the data files compiled into the library.
  static const Registry& builtin();

  /// Version-dependent model settings for a task.
  SegConfig get_seg_config_by_task_name(const std::string& task, Resolution resolution,
                                        int version) const;

  /// Class map of a task, with version redirection (version 1 maps
  /// appendicular_bones / tissue_types onto bone_tissue_test) and optional
  /// merging of auxiliary entries.
  ClassMap load_class_map(const std::string& task, int version,
                          bool append_auxiliary = true) const;

  /// Fold case and separators, resolve synonyms, and restore the registry's
  /// canonical spelling ("Vertebrae l1" -> "vertebrae_L1"). Unknown names
  /// pass through in folded form; `known` reports whether the result names a
  /// graph node, group, or bilateral stem.
  std::string normalize_anatomy_name(const std::string& name) const;
  std::string normalize_anatomy_name(const std::string& name, bool& known) const;

  const AnatomyGraph& graph() const { return graph_; }

  /// normalize + graph expansion in one step.
  std::vector<std::string> expand_selection(const std::string& selector) const;

  /// Names in a class map that are individually analyzable muscles, found by
  /// keyword search over names and their synonyms.
  std::vector<std::string> muscle_names(const ClassMap& map) const;

  const std::map<std::string, std::string>& synonyms() const { return synonyms_; }

  Registry(const nlohmann::json& class_maps, const nlohmann::json& settings,
           const nlohmann::json& hierarchy, const nlohmann::json& groups,
           const nlohmann::json& synonyms);

private:
  std::map<std::string, ClassMap> class_maps_;  // key: task_vN
  nlohmann::json settings_;
  std::map<std::string, std::string> synonyms_;
  AnatomyGraph graph_;
  std::map<std::string, std::string> canonical_spelling_;  // folded -> as stored
};

}  // namespace aarchive
