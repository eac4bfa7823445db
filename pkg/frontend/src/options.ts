/** The fixed answer option sets. The comparison screen offers exactly four
 * choices (forced choice: deliberately no "no difference"), the rating screen
 * the five scale points with captioned endpoints. */

import type { Mode } from "./api.js";

export interface ChoiceOption {
  /** wire value posted to the server */
  value: string;
  /** label shown on the button */
  label: string;
}

export const CCR_OPTIONS: readonly ChoiceOption[] = Object.freeze([
  { value: "i_more", label: "i is more so" },
  { value: "i_little", label: "i is a little more so" },
  { value: "j_little", label: "j is a little more so" },
  { value: "j_more", label: "j is more so" },
]);

export const ACR_OPTIONS: readonly ChoiceOption[] = Object.freeze([
  { value: "1", label: "1: not so" },
  { value: "2", label: "2" },
  { value: "3", label: "3" },
  { value: "4", label: "4" },
  { value: "5", label: "5: so" },
]);

export function choiceOptions(mode: Mode): readonly ChoiceOption[] {
  return mode === "ccr" ? CCR_OPTIONS : ACR_OPTIONS;
}
