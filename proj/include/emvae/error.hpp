#pragma once

#include <stdexcept>
#include <string>

namespace emvae {

// Base for every library error. The category lets the CLI map failures onto
// exit codes without string matching.
class Error : public std::runtime_error {
public:
    enum class Category { config, data, numeric, state };

    Error(Category category, const std::string& what)
        : std::runtime_error(what), category_(category) {}

    Category category() const noexcept { return category_; }

private:
    Category category_;
};

struct DimensionError : Error {
    explicit DimensionError(const std::string& w) : Error(Category::data, "dimension error: " + w) {}
};

struct GeometryError : Error {
    explicit GeometryError(const std::string& w) : Error(Category::config, "geometry error: " + w) {}
};

struct StateError : Error {
    explicit StateError(const std::string& w) : Error(Category::state, "state error: " + w) {}
};

struct NumericError : Error {
    explicit NumericError(const std::string& w) : Error(Category::numeric, "numeric error: " + w) {}
};

struct ValidationError : Error {
    explicit ValidationError(const std::string& w) : Error(Category::data, "validation error: " + w) {}
};

struct AmbiguousTopologyError : Error {
    explicit AmbiguousTopologyError(const std::string& w)
        : Error(Category::data, "ambiguous topology: " + w) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& w) : Error(Category::config, "config error: " + w) {}
};

struct FormatError : Error {
    explicit FormatError(const std::string& w) : Error(Category::data, "format error: " + w) {}
};

// An artifact was produced for a different set of registered topologies.
struct RegistryMismatchError : Error {
    explicit RegistryMismatchError(const std::string& w) : Error(Category::config, "registry mismatch: " + w) {}
};

} // namespace emvae
