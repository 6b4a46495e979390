#pragma once

#include "abstrakt/scm.hpp"

#include <string>

namespace abstrakt {

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& text);

// Parses and validates a model document.
DiscreteScm validate_scm(const std::string& json_text);
DiscreteScm load_scm(const std::string& path);
std::string scm_to_json(const DiscreteScm& scm);

}  // namespace abstrakt
