#pragma once

#include <string>

#include "rgmp/gmm.hpp"
#include "rgmp/model.hpp"

namespace rgmp {

// Binary parameter container: magic "RGMP", a format version, a 4-byte section
// tag ("ARGN" for policy models, "GMM0" for mixtures), named scalar config
// entries, a named-array manifest (name, rank, dims, offset), and one raw
// little-endian f64 blob. Writers emit arrays in the model's stable parameter
// order, so identical parameters produce byte-identical files.
//
// Open/read failures and structural corruption throw IoError; semantic
// mismatches (wrong section tag, missing config keys, unknown parameter names,
// shape disagreements) throw ValidationError.

void save_model_checkpoint(const std::string& path, const PolicyModel& m);
PolicyModel load_model_checkpoint(const std::string& path);

void save_gmm_checkpoint(const std::string& path, const GmmParams& g);
GmmParams load_gmm_checkpoint(const std::string& path);

}  // namespace rgmp
