#pragma once

#include <stdexcept>
#include <string>

namespace tamcl {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define TAMCL_DEFINE_ERROR(Name)              \
    class Name : public Error {               \
    public:                                   \
        using Error::Error;                   \
    }

TAMCL_DEFINE_ERROR(ShapeError);
TAMCL_DEFINE_ERROR(NumericError);
TAMCL_DEFINE_ERROR(IndexError);
TAMCL_DEFINE_ERROR(ContractError);
TAMCL_DEFINE_ERROR(ConfigError);
TAMCL_DEFINE_ERROR(VocabularyError);
TAMCL_DEFINE_ERROR(RegistryError);
TAMCL_DEFINE_ERROR(RoutingError);
TAMCL_DEFINE_ERROR(DegenerateReferenceError);
TAMCL_DEFINE_ERROR(CompletenessError);
TAMCL_DEFINE_ERROR(ValidationError);
TAMCL_DEFINE_ERROR(IoError);

#undef TAMCL_DEFINE_ERROR

}  // namespace tamcl
