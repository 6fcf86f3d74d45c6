#pragma once

#include <filesystem>
#include <string>

namespace hmmlab {

// Reads curves.csv and summary.json from run_dir and renders one block per
// setting with methods ranked by final gap. When curves_out is non-empty, the
// curve rows of each setting go to curves_out/<setting_id>.csv. run_dir is
// never written. Throws MissingArtifacts.
std::string render_report(const std::filesystem::path& run_dir, const std::filesystem::path& curves_out = {});

}  // namespace hmmlab
