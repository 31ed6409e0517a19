/** Keyboard shortcut mapping: a=accept, r=reject, e=edit, plus arrow/space
 * navigation. Keys typed into form fields are never treated as shortcuts. */

export type KeyAction = 'accept' | 'reject' | 'edit' | 'next' | 'toggle-think' | null;

export interface KeyInput {
  key: string;
  inEditableTarget: boolean;
}

const KEY_MAP: Record<string, KeyAction> = {
  a: 'accept',
  r: 'reject',
  e: 'edit',
  n: 'next',
  ArrowRight: 'next',
  t: 'toggle-think',
};

export function mapKey(input: KeyInput): KeyAction {
  if (input.inEditableTarget) return null;
  return KEY_MAP[input.key] ?? KEY_MAP[input.key.toLowerCase()] ?? null;
}

export function isEditableTarget(target: unknown): boolean {
  if (typeof HTMLElement === 'undefined' || !(target instanceof HTMLElement)) {
    return false;
  }
  return (
    target instanceof HTMLInputElement ||
    target instanceof HTMLTextAreaElement ||
    target.isContentEditable
  );
}
