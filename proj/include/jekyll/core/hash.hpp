#pragma once

#include <string>
#include <string_view>

namespace jekyll {

std::string sha256_hex(std::string_view data);

}  // namespace jekyll
