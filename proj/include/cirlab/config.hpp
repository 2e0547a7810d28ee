#pragma once

#include <string>
#include <vector>

#include "cirlab/trainer.hpp"

namespace cirlab {

// Flat key=value configuration with dotted sections. Every RunConfig field is
// addressable; unknown keys are rejected with the list of valid keys.
std::vector<std::string> config_keys();
void apply_config_value(RunConfig& cfg, const std::string& key, const std::string& value);
std::string get_config_value(const RunConfig& cfg, const std::string& key);

// '#' comments and blank lines allowed; one key=value per line.
void apply_config_file(RunConfig& cfg, const std::string& path);
void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin);

// Full dump in key order, suitable for config.resolved and for diffing.
std::string dump_config(const RunConfig& cfg);

// Ablation presets mirroring the reported experiment tables.
struct Preset {
  std::string name;
  std::string description;
};

std::vector<Preset> list_presets();
bool is_preset(const std::string& name);
void apply_preset(RunConfig& cfg, const std::string& name);

// Preset groups per comparison table id (1..4).
std::vector<std::string> table_presets(int table_id);

// Desk-scale configuration the comparison tables run at: the stock stream
// (T=10, C=12) with enough optimization per experience for the ablation
// effects to register on a laptop CPU within minutes.
RunConfig desk_ablation_config();

}  // namespace cirlab
