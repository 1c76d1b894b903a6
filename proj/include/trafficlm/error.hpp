#pragma once

#include <stdexcept>
#include <string>

namespace trafficlm {

/// Broad failure category; the CLI maps each to an exit code.
enum class ErrorKind {
    usage = 1,     // bad flags, config values, mismatched artifacts
    data = 2,      // malformed or inconsistent input files
    internal = 3,  // numerical blow-ups, invariant violations
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, std::string code, const std::string &message);

    ErrorKind kind() const noexcept { return kind_; }
    /// Short machine-readable name such as "MissingColumn".
    const std::string &code() const noexcept { return code_; }

private:
    ErrorKind kind_;
    std::string code_;
};

#define TRAFFICLM_DEFINE_ERROR(Name, Kind)                                   \
    class Name : public Error {                                              \
    public:                                                                  \
        explicit Name(const std::string &message)                            \
            : Error(ErrorKind::Kind, #Name, message) {}                      \
    }

// ingest
TRAFFICLM_DEFINE_ERROR(MissingColumn, data);
TRAFFICLM_DEFINE_ERROR(RaggedRow, data);
TRAFFICLM_DEFINE_ERROR(UnknownLabel, data);
TRAFFICLM_DEFINE_ERROR(MalformedCapture, data);
TRAFFICLM_DEFINE_ERROR(SchemaError, data);
TRAFFICLM_DEFINE_ERROR(IoError, data);

// ppfle
TRAFFICLM_DEFINE_ERROR(BadTruncation, usage);
TRAFFICLM_DEFINE_ERROR(ArityMismatch, data);

// tokenizer
TRAFFICLM_DEFINE_ERROR(EmptyCorpus, data);
TRAFFICLM_DEFINE_ERROR(CorruptFile, data);
TRAFFICLM_DEFINE_ERROR(MissingFile, data);

// model
TRAFFICLM_DEFINE_ERROR(BadConfig, usage);
TRAFFICLM_DEFINE_ERROR(IdOutOfRange, data);
TRAFFICLM_DEFINE_ERROR(SequenceTooLong, data);
TRAFFICLM_DEFINE_ERROR(ShapeMismatch, data);
TRAFFICLM_DEFINE_ERROR(VersionMismatch, data);
TRAFFICLM_DEFINE_ERROR(CorruptCheckpoint, data);

// training
TRAFFICLM_DEFINE_ERROR(NonFiniteLoss, internal);
TRAFFICLM_DEFINE_ERROR(BadLabel, data);

// evaluation
TRAFFICLM_DEFINE_ERROR(LengthMismatch, data);
TRAFFICLM_DEFINE_ERROR(LabelOutOfRange, data);
TRAFFICLM_DEFINE_ERROR(DegenerateClass, data);
TRAFFICLM_DEFINE_ERROR(FitFailed, data);

#undef TRAFFICLM_DEFINE_ERROR

}  // namespace trafficlm
