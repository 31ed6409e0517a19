import { describe, expect, it } from 'vitest';

import { mapKey } from '../src/keyboard.js';

describe('mapKey', () => {
  it('maps the review shortcuts', () => {
    expect(mapKey({ key: 'a', inEditableTarget: false })).toBe('accept');
    expect(mapKey({ key: 'r', inEditableTarget: false })).toBe('reject');
    expect(mapKey({ key: 'e', inEditableTarget: false })).toBe('edit');
    expect(mapKey({ key: 't', inEditableTarget: false })).toBe('toggle-think');
    expect(mapKey({ key: 'ArrowRight', inEditableTarget: false })).toBe('next');
  });

  it('is case-insensitive for letters', () => {
    expect(mapKey({ key: 'A', inEditableTarget: false })).toBe('accept');
    expect(mapKey({ key: 'R', inEditableTarget: false })).toBe('reject');
  });

  it('ignores keys typed into editable targets', () => {
    expect(mapKey({ key: 'a', inEditableTarget: true })).toBeNull();
    expect(mapKey({ key: 'e', inEditableTarget: true })).toBeNull();
  });

  it('returns null for unmapped keys', () => {
    expect(mapKey({ key: 'x', inEditableTarget: false })).toBeNull();
    expect(mapKey({ key: 'Escape', inEditableTarget: false })).toBeNull();
  });
});
