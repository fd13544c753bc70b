import { describe, expect, it } from 'vitest';

import { ReviewFormState, StorageLike } from '../src/state.js';
import { makeItem } from './fake-service.js';

class MemoryStorage implements StorageLike {
    map = new Map<string, string>();
    getItem(key: string) {
        return this.map.get(key) ?? null;
    }
    setItem(key: string, value: string) {
        this.map.set(key, value);
    }
    removeItem(key: string) {
        this.map.delete(key);
    }
}

describe('ReviewFormState', () => {
    it('blocks submit until a choice is made', () => {
        const form = new ReviewFormState('ana', makeItem('qa-1'));
        expect(form.canSubmit()).toBe(false);
        form.choosePass();
        expect(form.canSubmit()).toBe(true);
    });

    it('flag requires a criterion', () => {
        const form = new ReviewFormState('ana', makeItem('qa-1'));
        form.chooseFlag('coherence');
        expect(form.canSubmit()).toBe(true);
        expect(form.verdictBody()).toEqual({
            inspector: 'ana',
            flagged: true,
            rule: 'coherence',
            note: null,
        });
    });

    it('pass clears any earlier criterion', () => {
        const form = new ReviewFormState('ana', makeItem('qa-1'));
        form.chooseFlag('clarity');
        form.choosePass();
        expect(form.criterion).toBeNull();
        expect(form.verdictBody().flagged).toBe(false);
    });

    it('verdictBody throws while incomplete', () => {
        const form = new ReviewFormState('ana', makeItem('qa-1'));
        expect(() => form.verdictBody()).toThrow();
    });

    it('persists drafts across navigation and clears on submit', () => {
        const storage = new MemoryStorage();
        const first = new ReviewFormState('ana', makeItem('qa-1'), storage);
        first.chooseFlag('logicality');
        first.setNote('leaks a box');

        const reloaded = new ReviewFormState('ana', makeItem('qa-1'), storage);
        expect(reloaded.choice).toBe('flag');
        expect(reloaded.criterion).toBe('logicality');
        expect(reloaded.note).toBe('leaks a box');

        reloaded.clearDraft();
        const afterClear = new ReviewFormState('ana', makeItem('qa-1'), storage);
        expect(afterClear.choice).toBeNull();
    });

    it('drafts are scoped per inspector and item', () => {
        const storage = new MemoryStorage();
        new ReviewFormState('ana', makeItem('qa-1'), storage).chooseFlag('clarity');
        const other = new ReviewFormState('ben', makeItem('qa-1'), storage);
        expect(other.choice).toBeNull();
        const otherItem = new ReviewFormState('ana', makeItem('qa-2'), storage);
        expect(otherItem.choice).toBeNull();
    });
});
