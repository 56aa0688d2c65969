#pragma once

// Single place that pulls in the vendored nlohmann/json.
#include <json.hpp>
