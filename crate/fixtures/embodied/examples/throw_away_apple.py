def throw_away_apple():
    # Step 1: Pick up the apple
    walk('kitchen')
    find('apple')
    grab('apple')
    # Step 2: Open the garbage can
    assert('close' to 'garbagecan')
        else: find('garbagecan')
    open('garbagecan')
    # Step 3: Drop the apple
    put_back('apple')
