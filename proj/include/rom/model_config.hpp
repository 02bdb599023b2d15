#pragma once

#include <rom/diffcore.hpp>

#include <json.hpp>

#include <vector>

namespace rom {

/// Network widths. Defaults follow the published layer table; the branch
/// output width is doubled by concatenation into the object feature.
struct ModelConfig {
  int d_viz = 512;
  int classes = 10;
  std::vector<Eigen::Index> loc_widths{32, 64, 128};
  std::vector<Eigen::Index> branch_widths{512, 256, 128, 128};
  Eigen::Index head_hidden = 256;
  Eigen::Index agnn_width = 256;
  Eigen::Index agnn_hidden = 256;
  Eigen::Index dist_hidden = 256;
  double dustbin_init = 1.0;

  [[nodiscard]] Eigen::Index d_loc() const { return loc_widths.back(); }
  [[nodiscard]] Eigen::Index d_in() const { return d_viz + d_loc(); }
  [[nodiscard]] Eigen::Index d_branch() const { return branch_widths.back(); }
  [[nodiscard]] Eigen::Index d_obj() const { return 2 * d_branch(); }

  /// Feature widths of 8 throughout; used by gradient checks.
  static ModelConfig tiny(int d_viz = 8, int classes = 4) {
    ModelConfig c;
    c.d_viz = d_viz;
    c.classes = classes;
    c.loc_widths = {8, 8};
    c.branch_widths = {8, 4};
    c.head_hidden = 8;
    c.agnn_width = 8;
    c.agnn_hidden = 8;
    c.dist_hidden = 8;
    return c;
  }

  void validate() const {
    if (d_viz <= 0 || classes < 2) throw Error("model config: d_viz must be > 0 and classes >= 2");
    if (loc_widths.empty() || branch_widths.empty()) throw Error("model config: empty MLP widths");
    if (head_hidden <= 0 || agnn_width <= 0 || agnn_hidden <= 0 || dist_hidden <= 0) {
      throw Error("model config: widths must be positive");
    }
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"d_viz", c.d_viz},
                     {"classes", c.classes},
                     {"loc_widths", c.loc_widths},
                     {"branch_widths", c.branch_widths},
                     {"head_hidden", c.head_hidden},
                     {"agnn_width", c.agnn_width},
                     {"agnn_hidden", c.agnn_hidden},
                     {"dist_hidden", c.dist_hidden},
                     {"dustbin_init", c.dustbin_init}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.d_viz = j.value("d_viz", d.d_viz);
  c.classes = j.value("classes", d.classes);
  c.loc_widths = j.value("loc_widths", d.loc_widths);
  c.branch_widths = j.value("branch_widths", d.branch_widths);
  c.head_hidden = j.value("head_hidden", d.head_hidden);
  c.agnn_width = j.value("agnn_width", d.agnn_width);
  c.agnn_hidden = j.value("agnn_hidden", d.agnn_hidden);
  c.dist_hidden = j.value("dist_hidden", d.dist_hidden);
  c.dustbin_init = j.value("dustbin_init", d.dustbin_init);
  c.validate();
}

}  // namespace rom
