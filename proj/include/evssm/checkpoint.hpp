#ifndef EVSSM_CHECKPOINT_HPP
#define EVSSM_CHECKPOINT_HPP

#include <string>

#include "evssm/model.hpp"

namespace evssm::model {

// Versioned JSON checkpoint: config, lambda-frozen flag, and every parameter
// tensor as row-major doubles. Loading validates the schema, tensor shapes,
// finiteness and decay-rate positivity. Serialization is key-sorted, so equal
// models produce byte-identical documents.
std::string checkpoint_to_json(const Model& model);
Model checkpoint_from_json(const std::string& text);

void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

}  // namespace evssm::model

#endif  // EVSSM_CHECKPOINT_HPP
