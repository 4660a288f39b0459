#pragma once

#include "cirrl/linalg.hpp"
#include "cirrl/nn.hpp"

#include <json.hpp>

namespace cirrl {

using Json = nlohmann::json;

Json matrix_to_json(const DenseMatrix& m);
DenseMatrix matrix_from_json(const Json& j);
Json vector_to_json(const Vector& v);
Vector vector_from_json(const Json& j);

namespace nn {

/// {config, layers: [{weight, bias}], batch_norm: [{scale, shift, running_mean, running_var} | null]}.
/// Doubles are written in shortest round-trip form, so parsing restores every bit.
Json to_json(const Mlp& net);
Mlp mlp_from_json(const Json& j);

}  // namespace nn
}  // namespace cirrl
