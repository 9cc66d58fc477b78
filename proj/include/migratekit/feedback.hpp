#pragma once

#include <string>
#include <string_view>

#include "migratekit/test_ir.hpp"

// Canonical feedback and checking messages sent back to the LLM. Bracketed
// placeholders of the templates are replaced by a quoted step, e.g.
// "Step 3: (Event) Tap a widget [Add]".
namespace migratekit::feedback {

/// `"Step k: <rendered step>"`, the filler for [Step] placeholders.
std::string quote_step(const LogicStep& step);
/// Quotes an arbitrary line the same way.
std::string quote_text(std::string_view text);

std::string irrelevant_step();
std::string missing_step();
std::string ambiguous_action(const std::string& quoted_step);

std::string incorrect_type(const std::string& quoted_step);
std::string irrelevant_matching(const std::string& quoted_step);
std::string incorrect_format(const std::string& quoted_step);
/// Completion check; `generated` lists the events or assertions produced for
/// the step and fills the "[Events] or [Assertions]" slot.
std::string completion_check(const std::string& generated, const std::string& quoted_step);

}  // namespace migratekit::feedback
