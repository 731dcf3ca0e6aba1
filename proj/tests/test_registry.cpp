#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <set>

#include "aarchive/errors.hpp"
#include "aarchive/registry.hpp"

using namespace aarchive;
using nlohmann::json;

TEST_CASE("seg config for task total") {
  const Registry& reg = Registry::builtin();

  const SegConfig f2 = reg.get_seg_config_by_task_name("total", Resolution::Fine, 2);
  CHECK(f2.task_ids == std::vector<int>{291, 292, 293, 294, 295});
  CHECK(f2.voxel_size == 1.5);
  CHECK_FALSE(f2.crop.has_value());
  CHECK(f2.trainer == "nnUNetTrainerNoMirroring");

  const SegConfig f1 = reg.get_seg_config_by_task_name("total", Resolution::Fine, 1);
  CHECK(f1.task_ids == std::vector<int>{251, 252, 253, 254, 255});
  CHECK(f1.trainer == "nnUNetTrainerV2_ep4000_nomirror");

  CHECK(reg.get_seg_config_by_task_name("total", Resolution::Coarse, 1).voxel_size == 3.0);
  CHECK(reg.get_seg_config_by_task_name("total", Resolution::Coarse, 2).voxel_size == 3.0);
}

TEST_CASE("default trainer expands per version") {
  const Registry& reg = Registry::builtin();
  CHECK(reg.get_seg_config_by_task_name("body", Resolution::Fine, 1).trainer == "nnUNetTrainerV2");
  CHECK(reg.get_seg_config_by_task_name("body", Resolution::Fine, 2).trainer == "nnUNetTrainer");
}

TEST_CASE("seg config errors") {
  const Registry& reg = Registry::builtin();
  CHECK_THROWS_AS(reg.get_seg_config_by_task_name("no_such_task", Resolution::Fine, 2),
                  ConfigError);
  CHECK_THROWS_AS(reg.get_seg_config_by_task_name("tissue_types", Resolution::Coarse, 2),
                  ConfigError);
  CHECK_THROWS_AS(reg.get_seg_config_by_task_name("bone_tissue_test", Resolution::Fine, 2),
                  ConfigError);
  CHECK_THROWS_AS(reg.get_seg_config_by_task_name("total", Resolution::Fine, 3), ConfigError);
}

TEST_CASE("class map content spot checks") {
  const Registry& reg = Registry::builtin();

  const ClassMap v2 = reg.load_class_map("total", 2);
  CHECK(v2.entries.size() == 117);
  CHECK(v2.name_of(1) == "spleen");
  CHECK(v2.name_of(31) == "vertebrae_L1");
  CHECK(v2.name_of(51) == "heart");
  CHECK(v2.name_of(52) == "aorta");
  CHECK(v2.name_of(69) == "humerus_left");
  CHECK(v2.name_of(88) == "iliopsoas_left");
  CHECK(v2.name_of(117) == "costal_cartilages");

  const ClassMap v1 = reg.load_class_map("total", 1);
  CHECK(v1.entries.size() == 104);
  CHECK(v1.name_of(7) == "aorta");
  CHECK(v1.name_of(104) == "urinary_bladder");

  const ClassMap body = reg.load_class_map("body", 2);
  CHECK(body.name_of(1) == "body_trunc");
  CHECK(body.name_of(2) == "body_extremities");
}

TEST_CASE("version 1 redirects split tasks to bone_tissue_test") {
  const Registry& reg = Registry::builtin();
  const ClassMap a = reg.load_class_map("appendicular_bones", 1);
  CHECK(a.task_name == "bone_tissue_test");
  CHECK(a.has_name("humerus"));
  CHECK(a.has_name("ulna"));
  CHECK(a.has_name("radius"));
  CHECK(a.has_name("skeletal_muscle"));

  const ClassMap t = reg.load_class_map("tissue_types", 1);
  CHECK(t.task_name == "bone_tissue_test");

  CHECK(reg.load_class_map("tissue_types", 2).task_name == "tissue_types");
}

TEST_CASE("auxiliary entries are appended on demand") {
  const Registry& reg = Registry::builtin();
  const ClassMap with = reg.load_class_map("appendicular_bones", 2, true);
  CHECK(with.has_name("humerus"));
  CHECK(with.label_of("humerus") == 12);
  CHECK(with.entries.size() == 12);

  const ClassMap without = reg.load_class_map("appendicular_bones", 2, false);
  CHECK_FALSE(without.has_name("humerus"));
  CHECK(without.entries.size() == 11);
}

TEST_CASE("synonym normalization") {
  const Registry& reg = Registry::builtin();
  CHECK(reg.normalize_anatomy_name("pelvic") == "hip");
  CHECK(reg.normalize_anatomy_name("spinal erectors") == "autochthon");
  CHECK(reg.normalize_anatomy_name("erector_spinae") == "autochthon");
  CHECK(reg.normalize_anatomy_name("liver") == "liver");
  CHECK(reg.normalize_anatomy_name("Liver") == "liver");
  CHECK(reg.normalize_anatomy_name("pelvic_left") == "hip_left");

  // Idempotence over the whole table.
  for (const auto& [alias, canon] : reg.synonyms())
    CHECK(reg.normalize_anatomy_name(canon) == canon);

  bool known = true;
  CHECK(reg.normalize_anatomy_name("xyzzy", known) == "xyzzy");
  CHECK_FALSE(known);
  reg.normalize_anatomy_name("femur", known);
  CHECK(known);
}

TEST_CASE("graph structure") {
  const AnatomyGraph& g = Registry::builtin().graph();
  CHECK(g.top_categories() == std::vector<std::string>{"bone", "lung", "soft_tissue"});
  CHECK(g.top_category_of("femur_left") == "bone");
  CHECK(g.top_category_of("lung_lower_lobe_right") == "lung");
  CHECK(g.top_category_of("liver") == "soft_tissue");
  CHECK(g.is_leaf("liver"));
  CHECK_FALSE(g.is_leaf("vertebrae"));
  CHECK_THROWS_AS(g.top_category_of("not_a_node"), DomainError);

  // Every class-map name of every task/version is an archivable leaf.
  const Registry& reg = Registry::builtin();
  for (const auto& [task, version] :
       std::vector<std::pair<std::string, int>>{{"total", 1},
                                                {"total", 2},
                                                {"body", 1},
                                                {"body", 2},
                                                {"tissue_types", 2},
                                                {"appendicular_bones", 2},
                                                {"bone_tissue_test", 1}}) {
    for (const auto& name : reg.load_class_map(task, version).names()) {
      CHECK(g.has_node(name));
      CHECK(g.is_leaf(name));
    }
  }
}

TEST_CASE("parallel group edges") {
  const AnatomyGraph& g = Registry::builtin().graph();
  // pancreas belongs to several groups: distinct tags on parallel edges.
  const auto tags = g.group_tags_of("pancreas");
  CHECK(std::count(tags.begin(), tags.end(), "endocrine") == 1);
  CHECK(std::count(tags.begin(), tags.end(), "parenchyma") == 1);
  CHECK(tags.size() >= 2);

  std::set<std::string> groups;
  for (const auto& e : g.group_edges()) {
    CHECK(e.tag == e.from);
    groups.insert(e.from);
  }
  for (const char* expected : {"bone", "digestive_accessory", "intestine", "muscle", "endocrine",
                               "parenchyma", "vasculature", "urinary", "cardiovascular",
                               "musculoskeletal", "gastrointestinal", "digestive"})
    CHECK(groups.count(expected) == 1);
}

TEST_CASE("expand_selection resolves leaves, stems, sides, and groups") {
  const Registry& reg = Registry::builtin();
  CHECK(reg.expand_selection("femur") ==
        std::vector<std::string>{"femur_left", "femur_right"});
  CHECK(reg.expand_selection("femur left") == std::vector<std::string>{"femur_left"});
  CHECK(reg.expand_selection("left femur") == std::vector<std::string>{"femur_left"});
  CHECK(reg.expand_selection("liver") == std::vector<std::string>{"liver"});
  CHECK(reg.expand_selection("pelvic") ==
        std::vector<std::string>{"hip_left", "hip_right"});
  CHECK(reg.expand_selection("spinal erectors") ==
        std::vector<std::string>{"autochthon_left", "autochthon_right"});

  const auto lungs = reg.expand_selection("lung");
  CHECK(lungs.size() == 5);
  CHECK(std::is_sorted(lungs.begin(), lungs.end()));

  const auto cardio = reg.expand_selection("cardiovascular");
  CHECK(std::count(cardio.begin(), cardio.end(), "heart") == 1);
  CHECK(std::count(cardio.begin(), cardio.end(), "aorta") == 1);

  CHECK_THROWS_AS(reg.expand_selection("sternum left"), DomainError);
  CHECK_THROWS_AS(reg.expand_selection("nonexistent_thing"), DomainError);
}

TEST_CASE("group expansion equals union over members") {
  const AnatomyGraph& g = Registry::builtin().graph();
  for (const auto& [group, members] : g.groups()) {
    std::set<std::string> whole;
    const auto direct = g.expand_selection(group);
    whole.insert(direct.begin(), direct.end());

    std::set<std::string> unioned;
    for (const auto& m : members) {
      const auto part = g.expand_selection(m);
      unioned.insert(part.begin(), part.end());
    }
    CHECK(whole == unioned);
  }
}

TEST_CASE("graph serialization round trip") {
  const AnatomyGraph& g = Registry::builtin().graph();
  const AnatomyGraph h = AnatomyGraph::from_json(g.to_json());
  CHECK(h.top_categories() == g.top_categories());
  CHECK(h.groups() == g.groups());
  CHECK(h.expand_selection("musculoskeletal") == g.expand_selection("musculoskeletal"));
  CHECK(h.is_leaf("liver"));
}

TEST_CASE("bad graphs are rejected") {
  json cyclic = json::parse(R"({"a": {"b": {"a": []}}})");
  CHECK_THROWS_AS(build_anatomy_graph(cyclic, {}), DomainError);

  json ok = json::parse(R"({"root": ["x", "y"]})");
  CHECK_THROWS_AS(build_anatomy_graph(ok, {{"g", {"missing_member"}}}), DomainError);
  CHECK_NOTHROW(build_anatomy_graph(ok, {{"g", {"x"}}}));
}

TEST_CASE("muscle keyword search") {
  const Registry& reg = Registry::builtin();
  const auto muscles = reg.muscle_names(reg.load_class_map("total", 2));
  const std::vector<std::string> expect{
      "autochthon_left",      "autochthon_right",    "gluteus_maximus_left",
      "gluteus_maximus_right", "gluteus_medius_left", "gluteus_medius_right",
      "gluteus_minimus_left",  "gluteus_minimus_right", "iliopsoas_left",
      "iliopsoas_right"};
  CHECK(muscles == expect);

  const auto tissue = reg.muscle_names(reg.load_class_map("tissue_types", 2));
  CHECK(tissue == std::vector<std::string>{"skeletal_muscle"});
}
